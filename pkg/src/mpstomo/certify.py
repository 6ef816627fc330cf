"""Assumption-free fidelity lower bounds from local measurements.

An MPS estimate defines a parent Hamiltonian ``H = sum_i h_i`` whose terms
project out the support of its window reductions. When ``H`` has a unique,
gapped ground state, any lab state obeys
``<psi|rho|psi> >= 1 - tr(rho H) / gap``, and ``tr(rho H)`` only needs the
measured window reductions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from mpstomo.errors import ConvergenceError, DataFormatError, SizeLimitError
from mpstomo.exactsim import evolve_exact, noisy_density_matrix
from mpstomo.localtomo import WindowEstimate, linear_inversion, narrow_estimates
from mpstomo.measure import NoiseModel, derive_seed
from mpstomo.mps import MPS, compress, local_reductions_mps, normalize, product_mps, to_dense
from mpstomo.paulis import all_words
from mpstomo.spinmodel import ChainSpec, neel_state

log = logging.getLogger(__name__)

CERT_FORMAT = "cert-v1"
SUPPORT_TOL = 1e-7
DEGENERACY_TOL = 1e-6
ANNIHILATION_TOL = 1e-8
GAP_MAX_SITES = 16
DENSE_GAP_MAX_SITES = 10


@dataclass
class WindowProjectorTerm:
    window: tuple[int, int]
    h: np.ndarray
    support_rank: int = 0
    near_tolerance: bool = False

    @property
    def start(self) -> int:
        return self.window[0]

    @property
    def k(self) -> int:
        return self.window[1]


class GapInfo(NamedTuple):
    ground_energy: float
    gap: float
    ground_degeneracy: int


@dataclass
class Certificate:
    f_c: float
    gap: float
    energy: float
    per_window_energy: list[float]
    bootstrap_stderr: float
    k: int
    valid: bool
    bond_dims: list[int] = field(default_factory=list)
    ground_degeneracy: int = 0
    clipped_windows: int = 0
    reason: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": CERT_FORMAT,
            "f_c": self.f_c,
            "gap": self.gap,
            "energy": self.energy,
            "per_window_energy": self.per_window_energy,
            "bootstrap_stderr": self.bootstrap_stderr,
            "k": self.k,
            "valid": self.valid,
            "bond_dims": self.bond_dims,
            "ground_degeneracy": self.ground_degeneracy,
            "clipped_windows": self.clipped_windows,
            "reason": self.reason,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> Certificate:
        if d.get("format") != CERT_FORMAT:
            raise DataFormatError(f"expected format {CERT_FORMAT!r}, got {d.get('format')!r}")
        return cls(**{k: v for k, v in d.items() if k != "format"})


def invalid_certificate(k: int, reason: str, gap: float = 0.0, degeneracy: int = 0) -> Certificate:
    return Certificate(0.0, gap, float("nan"), [], 0.0, k, False, ground_degeneracy=degeneracy, reason=reason)


def parent_hamiltonian(
    mps: MPS, k: int, support_tol: float = SUPPORT_TOL, warn: bool = True
) -> list[WindowProjectorTerm]:
    """One projector ``h_i = 1 - P_supp(rho_i)`` per window of ``k`` sites, in window order.

    Terms whose reduction has eigenvalues within a factor 10 of
    ``support_tol`` are flagged ``near_tolerance`` (and logged when ``warn``).
    """
    terms = []
    for i, rho in enumerate(local_reductions_mps(normalize(mps), k)):
        evals, evecs = np.linalg.eigh(rho)
        keep = evals > support_tol
        near = bool(np.any((evals > support_tol / 10) & (evals < support_tol * 10)))
        if near and warn:
            log.warning("window (%d, %d): reduction eigenvalues within 10x of support_tol=%g", i, k, support_tol)
        V = evecs[:, keep]
        h = np.eye(rho.shape[0], dtype=complex) - V @ V.conj().T
        terms.append(WindowProjectorTerm((i, k), (h + h.conj().T) / 2, int(keep.sum()), near))
    return terms


def hamiltonian_matrix(terms: Sequence[WindowProjectorTerm], n_sites: int) -> sp.csr_matrix:
    """Sparse ``sum_i 1 (x) h_i (x) 1`` on the full ``2^N`` space."""
    H = sp.csr_matrix((1 << n_sites, 1 << n_sites), dtype=complex)
    for term in terms:
        i, k = term.window
        left = sp.identity(1 << i, dtype=complex, format="csr")
        right = sp.identity(1 << (n_sites - i - k), dtype=complex, format="csr")
        H = H + sp.kron(sp.kron(left, sp.csr_matrix(term.h)), right, format="csr")
    return H


def _levels(evals: np.ndarray) -> GapInfo:
    e0 = float(evals[0])
    deg = int(np.count_nonzero(evals - e0 <= DEGENERACY_TOL))
    gap = float(evals[deg] - e0) if deg < len(evals) else 0.0
    return GapInfo(e0, gap, deg)


def spectral_gap(terms: Sequence[WindowProjectorTerm], n_sites: int, n_eigs: int = 6) -> GapInfo:
    """Ground energy, gap above the (possibly degenerate) ground level and its degeneracy.

    Dense diagonalization up to 10 sites, Lanczos (``eigsh``) beyond. If all
    ``n_eigs`` computed eigenvalues are degenerate, the returned gap is 0.
    """
    if n_sites > GAP_MAX_SITES:
        raise SizeLimitError(f"spectral gap limited to N <= {GAP_MAX_SITES}, got {n_sites}")
    H = hamiltonian_matrix(terms, n_sites)
    if n_sites <= DENSE_GAP_MAX_SITES:
        return _levels(np.linalg.eigvalsh(H.toarray()))
    try:
        evals = eigsh(H, k=n_eigs, which="SA", tol=1e-12, return_eigenvectors=False, ncv=40)
    except ArpackNoConvergence as exc:
        found = np.sort(exc.eigenvalues.real) if len(exc.eigenvalues) else np.array([np.nan])
        raise ConvergenceError("eigsh did not converge on the parent Hamiltonian", float(found[0])) from exc
    return _levels(np.sort(evals.real))


def _measured_matrix(e: WindowEstimate) -> np.ndarray:
    """Linear-inversion reduction of the measured Pauli means (``rho`` when no means are stored).

    The energy is linear in the reduction, so evaluating it before the
    projection to physical states keeps it unbiased; the projection clips
    noise in the null directions of the true reduction, which are exactly
    the directions ``h`` measures.
    """
    if len(e.pauli_means) == 1 << (2 * e.k):
        return linear_inversion(e.pauli_means, e.k)
    return e.rho


def _window_energies(estimates: Sequence[WindowEstimate], terms: Sequence[WindowProjectorTerm]) -> np.ndarray:
    return np.array([float(np.real(np.trace(_measured_matrix(e) @ t.h))) for e, t in zip(estimates, terms)])


def _bootstrap(
    estimates: Sequence[WindowEstimate],
    terms: Sequence[WindowProjectorTerm],
    gap: float,
    n_boot: int,
    seed: int,
) -> float:
    """Std of f_c over Gaussian resamples of the Pauli means (zero when all stderrs vanish)."""
    if n_boot < 2 or all(max(e.pauli_stderr.values(), default=0.0) == 0 for e in estimates):
        return 0.0
    k = estimates[0].k
    words = all_words(k)[1:]
    samples = []
    for b in range(n_boot):
        rng = np.random.default_rng(derive_seed(seed, "bootstrap", b))
        energy = 0.0
        for e, t in zip(estimates, terms):
            sd = np.array([e.pauli_stderr.get(w, 0.0) for w in words])
            mean = np.array([e.pauli_means[w] for w in words])
            draw = np.clip(mean + sd * rng.standard_normal(len(words)), -1.0, 1.0)
            rho = linear_inversion({"I" * k: 1.0, **dict(zip(words, draw))}, k)
            energy += max(0.0, float(np.real(np.trace(rho @ t.h))))
        samples.append(max(0.0, 1.0 - energy / gap))
    return float(np.std(samples, ddof=1))


def certificate(
    mps: MPS,
    terms: Sequence[WindowProjectorTerm],
    estimates: Sequence[WindowEstimate],
    gap_info: GapInfo,
    n_boot: int = 200,
    seed: int = 0,
) -> Certificate:
    """``f_c = max(0, 1 - E / gap)`` with ``E = sum_i tr(rho_hat_i h_i)``.

    The certificate is invalid (``f_c = 0``) when the parent Hamiltonian's
    ground level is degenerate or does not contain the MPS, which signals that
    windows of this width do not determine the state.
    """
    if not terms:
        raise ValueError("no parent-Hamiltonian terms")
    k = terms[0].k
    if len(estimates) != len(terms) or any(e.window != t.window for e, t in zip(estimates, terms)):
        raise ValueError("estimates and projector terms must cover the same windows")
    mps = normalize(mps)
    bonds = list(mps.bond_dims)
    annihilation = _window_energies(estimates_from_mps(mps, k), terms)
    if gap_info.ground_degeneracy != 1:
        cert = invalid_certificate(k, "degenerate ground space", gap_info.gap, gap_info.ground_degeneracy)
    elif gap_info.ground_energy > ANNIHILATION_TOL or annihilation.max() > ANNIHILATION_TOL:
        cert = invalid_certificate(k, "MPS is not annihilated by the parent Hamiltonian", gap_info.gap, 1)
    elif gap_info.gap <= 0:
        cert = invalid_certificate(k, "no gap resolved", 0.0, 1)
    else:
        raw = _window_energies(estimates, terms)
        clipped = int(np.count_nonzero(raw < 0))
        per_window = np.maximum(raw, 0.0)
        energy = float(per_window.sum())
        f_c = max(0.0, 1.0 - energy / gap_info.gap)
        stderr = _bootstrap(estimates, terms, gap_info.gap, n_boot, seed)
        cert = Certificate(
            f_c, gap_info.gap, energy, per_window.tolist(), stderr, k, True, ground_degeneracy=1, clipped_windows=clipped
        )
    cert.bond_dims = bonds
    return cert


def estimates_from_mps(mps: MPS, k: int) -> list[WindowEstimate]:
    return [WindowEstimate(i, k, rho, {}, {}) for i, rho in enumerate(local_reductions_mps(mps, k))]


def true_fidelity_oracle(mps: MPS, spec: ChainSpec, t: float, noise: NoiseModel | None = None) -> float:
    """``<psi|rho_true|psi>`` for the exact (optionally depolarized) quench state at time ``t``."""
    noise = noise or NoiseModel()
    n = spec.n_sites
    if mps.n_sites != n:
        raise ValueError(f"MPS has {mps.n_sites} sites, chain has {n}")
    if noise.p_local > 0 and n > DENSE_GAP_MAX_SITES:
        raise SizeLimitError(f"noisy fidelity oracle limited to N <= {DENSE_GAP_MAX_SITES}")
    state = evolve_exact(spec, neel_state(n), t)
    psi = to_dense(normalize(mps))
    if noise.p_local == 0:
        return float(abs(np.vdot(psi, state.to_full())) ** 2)
    rho = noisy_density_matrix(state, noise.p_local)
    return float(np.real(np.vdot(psi, rho @ psi)))


# ---------------------------------------------------------------- certified estimate selection


def candidate_profiles(n_sites: int, k: int) -> list[tuple[str, list[int]]]:
    """Bond-dimension profiles whose windows of width ``k`` can have proper supports.

    Uniform ``D`` with ``D^2 < 2^k`` plus, for ``k >= 2``, dimerized profiles
    (bond dimension 2 inside pairs, 1 between them) at both pair offsets.
    """
    out = []
    D = 1
    while D * D < (1 << k):
        out.append((f"uniform{D}", [D] * (n_sites - 1)))
        D += 1
    if k >= 2 and n_sites >= 3:
        for off in (0, 1):
            out.append((f"dimer{off}", [2 if (j - off) % 2 == 0 else 1 for j in range(n_sites - 1)]))
    return out


@dataclass
class CertifiedEstimate:
    mps: MPS
    certificate: Certificate
    source: str
    profile: str
    width: int
    candidates: list[dict] = field(default_factory=list)


def _dominant_product(estimates: Sequence[WindowEstimate]) -> MPS:
    singles = narrow_estimates(estimates, 1)
    return product_mps([np.linalg.eigh(e.rho)[1][:, -1] for e in singles])


def certify_estimate(
    sources: dict[str, MPS],
    estimates: Sequence[WindowEstimate],
    n_boot: int = 200,
    seed: int = 0,
    support_tol: float = SUPPORT_TOL,
) -> CertifiedEstimate:
    """Best valid certificate over candidate certified estimates.

    Candidates are SVD compressions of every source MPS to each profile from
    :func:`candidate_profiles`, plus the product of dominant single-site
    eigenvectors, certified with every window width ``k' <= k`` (estimates are
    traced down). Narrower windows are a subset of the measured data, so each
    candidate's bound is a valid bound for the width-``k`` data as well. The
    best ``f_c`` wins; ties go to the earliest candidate. Bootstrap errors are
    computed for the winner only.
    """
    k = estimates[0].k
    n = estimates[-1].start + k
    pool: list[tuple[str, str, MPS]] = [("product", "single-site", _dominant_product(estimates))]
    for name, m in sources.items():
        if m.n_sites != n:
            raise ValueError(f"source {name!r} has {m.n_sites} sites, estimates span {n}")
    rows = []
    best = None
    gaps: dict[tuple, GapInfo] = {}
    for width in range(1, k + 1):
        narrowed = narrow_estimates(estimates, width)
        cands = list(pool)
        for name, m in sources.items():
            for label, profile in candidate_profiles(n, width):
                cands.append((name, label, compress(m, profile)[0]))
        for name, label, cand in cands:
            terms = parent_hamiltonian(cand, width, support_tol, warn=False)
            gi = spectral_gap(terms, n)
            cert = certificate(cand, terms, narrowed, gi, n_boot=0)
            rows.append(
                {
                    "source": name,
                    "profile": label,
                    "width": width,
                    "f_c": cert.f_c,
                    "valid": cert.valid,
                    "near_tolerance": any(t.near_tolerance for t in terms),
                }
            )
            gaps[(name, label, width)] = gi
            if best is None or cert.f_c > best[0].f_c:
                best = (cert, name, label, width, cand, terms, narrowed, gi)
    cert, name, label, width, cand, terms, narrowed, gi = best
    if cert.valid and n_boot > 1:
        cert = certificate(cand, terms, narrowed, gi, n_boot=n_boot, seed=seed)
    cert.k = k
    return CertifiedEstimate(normalize(cand), cert, name, label, width, rows)
