"""Exact state-vector evolution of the XY chain at desk scale.

The XY Hamiltonian conserves the number of up spins, so the default path
evolves inside the fixed-excitation sector of the initial product state with a
Lanczos (Krylov) exponential. A dense eigendecomposition path is kept as an
independent cross-check for small chains.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp

from mpstomo.errors import ConvergenceError, SizeLimitError
from mpstomo.paulis import PAULI, validate_word
from mpstomo.spinmodel import ChainSpec, ProductState, build_hamiltonian_terms

MAX_SITES = 16
DENSE_MAX_SITES = 12
KRYLOV_TOL = 1e-10


@dataclass(frozen=True)
class SectorBasis:
    """Configurations of ``n_sites`` spins with exactly ``m`` up spins.

    A configuration is stored as its full-space index, where bit ``n-1-j``
    holds site ``j`` (0 = up, 1 = down). ``states`` is strictly increasing.
    """

    n_sites: int
    m: int
    states: np.ndarray

    @classmethod
    def build(cls, n_sites: int, m: int) -> SectorBasis:
        if not 0 <= m <= n_sites:
            raise ValueError(f"excitation count m={m} outside [0, {n_sites}]")
        full = (1 << n_sites) - 1
        states = []
        for ups in itertools.combinations(range(n_sites), m):
            up_mask = sum(1 << (n_sites - 1 - j) for j in ups)
            states.append(full ^ up_mask)
        return cls(n_sites, m, np.array(sorted(states), dtype=np.int64))

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, config: int) -> int:
        pos = int(np.searchsorted(self.states, config))
        if pos >= self.size or self.states[pos] != config:
            raise KeyError(f"configuration {config} not in sector m={self.m}")
        return pos


@dataclass(frozen=True)
class StateVector:
    """Pure state on ``n_sites`` qubits, stored in the full space or in one excitation sector."""

    n_sites: int
    amplitudes: np.ndarray
    sector: SectorBasis | None = None

    @property
    def basis(self) -> str:
        return "full" if self.sector is None else f"sector({self.sector.m})"

    def to_full(self) -> np.ndarray:
        if self.sector is None:
            return self.amplitudes
        v = np.zeros(1 << self.n_sites, dtype=complex)
        v[self.sector.states] = self.amplitudes
        return v

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_json(self) -> str:
        """Interleaved re/im export of the full vector, for small debugging chains."""
        if self.n_sites > 10:
            raise SizeLimitError("state-vector JSON export is limited to N <= 10")
        v = self.to_full()
        inter = np.empty(2 * len(v))
        inter[0::2] = v.real
        inter[1::2] = v.imag
        return json.dumps({"format": "statevector-v1", "n_sites": self.n_sites, "amplitudes": inter.tolist()})

    @classmethod
    def from_json(cls, text: str) -> StateVector:
        d = json.loads(text)
        a = np.asarray(d["amplitudes"], dtype=float)
        return cls(int(d["n_sites"]), a[0::2] + 1j * a[1::2])


def product_statevector(state: ProductState) -> StateVector:
    n = state.n_sites
    config = sum(b << (n - 1 - j) for j, b in enumerate(state.bits()))
    v = np.zeros(1 << n, dtype=complex)
    v[config] = 1.0
    return StateVector(n, v)


def _hamiltonian_entries(spec: ChainSpec, configs: np.ndarray):
    """Yield (row_config, col_config, value) of H restricted to ``configs``' connectivity."""
    terms = build_hamiltonian_terms(spec)
    n = spec.n_sites
    n_down = np.array([bin(int(c)).count("1") for c in configs])
    diag = spec.b_field * ((n - n_down) - n_down).astype(float)
    rows, cols, vals = [configs], [configs], [diag]
    for i, j, Jij in terms.hop_terms:
        bi = (configs >> (n - 1 - i)) & 1
        bj = (configs >> (n - 1 - j)) & 1
        mask = bi != bj
        src = configs[mask]
        dst = src ^ ((1 << (n - 1 - i)) | (1 << (n - 1 - j)))
        rows.append(dst)
        cols.append(src)
        vals.append(np.full(len(src), Jij))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def hamiltonian_sparse(spec: ChainSpec, sector: SectorBasis | None = None) -> sp.csr_matrix:
    """Sparse H_XY on the full space, or restricted to ``sector``."""
    n = spec.n_sites
    if n > MAX_SITES:
        raise SizeLimitError(f"N={n} exceeds the exact-simulation limit {MAX_SITES}")
    if sector is None:
        configs = np.arange(1 << n, dtype=np.int64)
        r, c, v = _hamiltonian_entries(spec, configs)
        return sp.csr_matrix((v, (r, c)), shape=(1 << n, 1 << n))
    r, c, v = _hamiltonian_entries(spec, sector.states)
    ri = np.searchsorted(sector.states, r)
    ci = np.searchsorted(sector.states, c)
    return sp.csr_matrix((v, (ri, ci)), shape=(sector.size, sector.size))


def expm_krylov(
    H: sp.spmatrix,
    v: np.ndarray,
    t: float,
    tol: float = KRYLOV_TOL,
    m_max: int = 40,
    max_splits: int = 30,
) -> np.ndarray:
    """Compute ``exp(-i H t) v`` for Hermitian ``H`` by Lanczos with adaptive time steps.

    Each step builds an ``m``-dimensional Krylov space, exponentiates the
    tridiagonal projection and estimates the residual from the last Lanczos
    coefficient. A step whose error estimate exceeds ``tol`` (scaled by the
    step's share of ``t``) is halved.
    """
    w = np.array(v, dtype=complex)
    if t == 0:
        return w
    dim = len(w)
    m_max = min(m_max, dim)
    remaining = float(t)
    tau = remaining
    splits = 0
    while remaining > 0:
        tau = min(tau, remaining)
        beta0 = np.linalg.norm(w)
        V = np.zeros((m_max + 1, dim), dtype=complex)
        alpha = np.zeros(m_max)
        beta = np.zeros(m_max)
        V[0] = w / beta0
        m = m_max
        for j in range(m_max):
            u = H @ V[j]
            alpha[j] = np.real(np.vdot(V[j], u))
            u = u - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
            # full reorthogonalisation keeps the small basis numerically orthonormal
            u -= V[: j + 1].T @ (V[: j + 1].conj() @ u)
            beta[j] = np.linalg.norm(u)
            if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
                m = j + 1
                break
            V[j + 1] = u / beta[j]
        T = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
        evals, evecs = np.linalg.eigh(T)
        c = evecs @ (np.exp(-1j * evals * tau) * evecs[0].conj())
        err = beta[m - 1] * abs(c[m - 1]) if m < dim and m == m_max else 0.0
        if err > tol * tau / t and splits < max_splits:
            tau /= 2
            splits += 1
            continue
        if err > tol * tau / t:
            raise ConvergenceError("Krylov exponential did not converge", residual=float(err))
        w = beta0 * (c @ V[:m])
        remaining -= tau
    return w


def _check_size(n: int, max_sites: int) -> None:
    if n > max_sites:
        raise SizeLimitError(
            f"N={n} exceeds the configured maximum {max_sites}; reduce N or raise max_sites"
        )


def evolve_exact(
    spec: ChainSpec,
    initial: ProductState,
    t: float,
    max_sites: int = MAX_SITES,
    path: str = "sector",
) -> StateVector:
    """Ideal quench state ``exp(-i H t)|initial>``.

    ``path`` selects the sector-restricted Krylov evolution (default), the
    full-space Krylov evolution, or a dense eigendecomposition (``"dense"``,
    N <= 12) used as an independent oracle.
    """
    n = spec.n_sites
    if initial.n_sites != n:
        raise ValueError(f"initial state has {initial.n_sites} sites, chain has {n}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    _check_size(n, max_sites)
    full0 = product_statevector(initial).to_full()
    if path == "sector":
        sector = SectorBasis.build(n, initial.n_up())
        v0 = full0[sector.states]
        H = hamiltonian_sparse(spec, sector)
        return StateVector(n, expm_krylov(H, v0, t), sector)
    if path == "full":
        return StateVector(n, expm_krylov(hamiltonian_sparse(spec), full0, t))
    if path == "dense":
        if n > DENSE_MAX_SITES:
            raise SizeLimitError(f"dense path limited to N <= {DENSE_MAX_SITES}")
        H = hamiltonian_sparse(spec).toarray()
        evals, evecs = np.linalg.eigh(H)
        return StateVector(n, evecs @ (np.exp(-1j * evals * t) * (evecs.conj().T @ full0)))
    raise ValueError(f"unknown evolution path {path!r}")


def reduced_density_matrix(state: StateVector | np.ndarray, sites) -> np.ndarray:
    """Partial trace onto ``sites`` (kept in the given order)."""
    psi = state.to_full() if isinstance(state, StateVector) else np.asarray(state)
    n = int(round(np.log2(psi.size)))
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites) or any(not 0 <= s < n for s in sites):
        raise ValueError(f"invalid site list {sites} for N={n}")
    if len(sites) > 8:
        raise ValueError("at most 8 sites per reduction")
    rest = [j for j in range(n) if j not in sites]
    T = np.transpose(psi.reshape([2] * n), sites + rest).reshape(1 << len(sites), -1)
    rho = T @ T.conj().T
    return rho / np.trace(rho).real


def exact_local_reductions(state: StateVector, k: int) -> list[np.ndarray]:
    n = state.n_sites
    if not 1 <= k <= min(n, 8):
        raise ValueError(f"window width k={k} outside [1, {min(n, 8)}]")
    return [reduced_density_matrix(state, range(i, i + k)) for i in range(n - k + 1)]


def apply_local_operator(psi: np.ndarray, op: np.ndarray, site: int, n: int) -> np.ndarray:
    T = psi.reshape(1 << site, 2, -1)
    return np.einsum("ab,ibj->iaj", op, T).reshape(-1)


def pauli_expectation_exact(state: StateVector | np.ndarray, pauli: str) -> float:
    psi = state.to_full() if isinstance(state, StateVector) else np.asarray(state)
    n = int(round(np.log2(psi.size)))
    word = validate_word(pauli, n)
    phi = psi
    for j, c in enumerate(word):
        if c != "I":
            phi = apply_local_operator(phi, PAULI[c], j, n)
    val = np.vdot(psi, phi) / np.vdot(psi, psi)
    return float(val.real)


def depolarize_reduction(rho: np.ndarray, p: float) -> np.ndarray:
    """Apply the single-site depolarizing channel with probability ``p`` to every site of ``rho``."""
    if not 0 <= p <= 1:
        raise ValueError(f"depolarizing probability must lie in [0, 1], got {p}")
    k = int(round(np.log2(rho.shape[0])))
    out = np.asarray(rho, dtype=complex)
    for j in range(k):
        T = out.reshape(1 << j, 2, 1 << (k - j - 1), 1 << j, 2, 1 << (k - j - 1))
        traced = np.einsum("asbcsd->abcd", T)
        mixed = np.einsum("abcd,st->asbctd", traced, np.eye(2) / 2)
        out = ((1 - p) * T + p * mixed).reshape(rho.shape)
    return out


def noisy_density_matrix(state: StateVector, p: float, max_sites: int = 10) -> np.ndarray:
    """Full density matrix of ``state`` after local depolarizing noise on every site."""
    if state.n_sites > max_sites:
        raise SizeLimitError(f"noisy density-matrix path limited to N <= {max_sites}")
    psi = state.to_full()
    return depolarize_reduction(np.outer(psi, psi.conj()), p)


def sector_dimension(n_sites: int, m: int) -> int:
    return comb(n_sites, m)
