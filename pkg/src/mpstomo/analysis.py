"""Derived quantities: magnetization, negativity, correlations, light cone and DFE."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mpstomo.errors import CoverageError, DataFormatError
from mpstomo.exactsim import StateVector, pauli_expectation_exact
from mpstomo.localtomo import _record_arrays
from mpstomo.measure import BasisSetting, NoiseModel, ShotRecord, derive_seed, sample_shots
from mpstomo.mps import MPS, expectation_local_mps, expectation_pauli_mps, normalize
from mpstomo.paulis import PAULI

DFE_FORMAT = "dfe-v1"
NEGATIVITY_CUTOFF = 1e-12


# ---------------------------------------------------------------- single-site and two-site moments


def _single_means_records(records: Sequence[ShotRecord], axis: str) -> tuple[np.ndarray, np.ndarray]:
    """Pooled ``<axis_i>`` and the shot totals behind them, per site."""
    n = records[0].setting.n_sites
    acc = np.zeros(n)
    tot = np.zeros(n)
    for axes, signs, counts, shots in _record_arrays(records):
        sel = np.array([a == axis for a in axes])
        acc[sel] += counts @ signs[:, sel]
        tot[sel] += shots
    means = np.divide(acc, tot, out=np.zeros(n), where=tot > 0)
    return means, tot


def magnetization_profile(source: StateVector | MPS | Sequence[ShotRecord]) -> np.ndarray:
    """Per-site up probabilities ``(1 + <Z_i>) / 2``."""
    if isinstance(source, StateVector):
        n = source.n_sites
        z = np.array([pauli_expectation_exact(source, "I" * i + "Z" + "I" * (n - i - 1)) for i in range(n)])
    elif isinstance(source, MPS):
        n = source.n_sites
        z = np.array([expectation_pauli_mps(source, "I" * i + "Z" + "I" * (n - i - 1)) for i in range(n)])
    else:
        if not source:
            raise CoverageError("no shot records supplied")
        z, tot = _single_means_records(source, "Z")
        missing = [str(i) for i in np.flatnonzero(tot == 0)]
        if missing:
            raise CoverageError(f"no Z-axis data for sites {missing}", missing)
    return np.clip((1 + z) / 2, 0.0, 1.0)


# ---------------------------------------------------------------- negativity


def partial_transpose(rho: np.ndarray, subsystem: Iterable[int]) -> np.ndarray:
    """Transpose the qubits in ``subsystem`` (positions inside ``rho``, 0 most significant)."""
    rho = np.asarray(rho)
    n = int(round(np.log2(rho.shape[0])))
    T = rho.reshape([2] * (2 * n))
    perm = list(range(2 * n))
    for q in subsystem:
        perm[q], perm[q + n] = perm[q + n], perm[q]
    return T.transpose(perm).reshape(rho.shape)


def negativity(rho: np.ndarray, bipartition: Iterable[int]) -> float:
    """``(||rho^{T_A}||_1 - 1) / 2`` for the qubit subset ``A = bipartition``."""
    rho = np.asarray(rho, dtype=complex)
    dim = rho.shape[0]
    if rho.shape != (dim, dim) or dim > 64 or dim & (dim - 1):
        raise ValueError(f"density matrix must be square with power-of-two dimension <= 64, got {rho.shape}")
    n = dim.bit_length() - 1
    part = sorted({int(q) for q in bipartition})
    if not part or len(part) == n or any(not 0 <= q < n for q in part):
        raise ValueError(f"invalid bipartition {list(bipartition)} of {n} qubits")
    pt = partial_transpose(rho, part)
    evals = np.linalg.eigvalsh((pt + pt.conj().T) / 2)
    evals[np.abs(evals) < NEGATIVITY_CUTOFF] = 0.0
    return float(max((np.abs(evals).sum() - np.trace(rho).real) / 2, 0.0))


def tripartite_negativity(rho: np.ndarray) -> float:
    """Geometric mean of the three single-site splittings of a 3-qubit state."""
    rho = np.asarray(rho)
    if rho.shape != (8, 8):
        raise ValueError(f"tripartite negativity needs an 8x8 density matrix, got {rho.shape}")
    vals = [negativity(rho, [q]) for q in range(3)]
    return float(np.prod(vals) ** (1 / 3))


# ---------------------------------------------------------------- correlations


@dataclass
class CorrelationMatrix:
    observable_pair: tuple[str, str]
    values: np.ndarray
    mask: np.ndarray

    def rows(self) -> list[tuple[int, int, float, bool]]:
        n = self.values.shape[0]
        return [(i, j, float(self.values[i, j]), bool(self.mask[i, j])) for i in range(n) for j in range(n)]


def _check_axes(A: str, B: str) -> tuple[str, str]:
    A, B = A.upper(), B.upper()
    if A not in "XYZ" or B not in "XYZ" or len(A) != 1 or len(B) != 1:
        raise ValueError(f"observables must be one of X, Y, Z; got {A!r}, {B!r}")
    return A, B


def correlation_matrix(source: StateVector | MPS | Sequence[ShotRecord], A: str, B: str) -> CorrelationMatrix:
    """Connected correlator ``<A_i B_j> - <A_i><B_j>``; masked entries are unmeasured.

    Same-site entries use the symmetrized product ``(A B + B A) / 2``, so the
    diagonal is ``1 - <A_i>^2`` for ``A = B`` and ``-<A_i><B_i>`` otherwise.
    """
    A, B = _check_axes(A, B)
    if isinstance(source, (StateVector, MPS)):
        n = source.n_sites
        if isinstance(source, StateVector):

            def ev(ops: dict[int, str]) -> float:
                return pauli_expectation_exact(source, "".join(ops.get(i, "I") for i in range(n)))

        else:
            src = normalize(source)

            def ev(ops: dict[int, str]) -> float:
                return float(expectation_local_mps(src, {i: PAULI[c] for i, c in ops.items()}).real)

        ma = np.array([ev({i: A}) for i in range(n)])
        mb = ma if A == B else np.array([ev({i: B}) for i in range(n)])
        C = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                if i == j:
                    both = 1.0 if A == B else 0.0
                elif A == B and j < i:
                    C[i, j] = C[j, i]
                    continue
                else:
                    both = ev({i: A, j: B})
                C[i, j] = both - ma[i] * mb[j]
        return CorrelationMatrix((A, B), C, np.zeros((n, n), dtype=bool))

    if not source:
        raise CoverageError("no shot records supplied")
    n = source[0].setting.n_sites
    ma, ta = _single_means_records(source, A)
    mb, tb = _single_means_records(source, B)
    acc = np.zeros((n, n))
    tot = np.zeros((n, n))
    for axes, signs, counts, shots in _record_arrays(source):
        sa = np.array([a == A for a in axes])
        sb = np.array([a == B for a in axes])
        pair = np.outer(sa, sb)
        prod = (signs.T.astype(float) * counts) @ signs.astype(float)
        acc[pair] += prod[pair]
        tot[pair] += shots
    C = np.zeros((n, n))
    mask = np.ones((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if i == j:
                if A == B and ta[i] > 0:
                    C[i, i], mask[i, i] = 1.0 - ma[i] ** 2, False
            elif tot[i, j] > 0 and ta[i] > 0 and tb[j] > 0:
                C[i, j], mask[i, j] = acc[i, j] / tot[i, j] - ma[i] * mb[j], False
    if A == B:
        both = ~mask & ~mask.T
        C = np.where(both, (C + C.T) / 2, C)
    return CorrelationMatrix((A, B), C, mask)


# ---------------------------------------------------------------- light cone


def light_cone_velocity(couplings: np.ndarray) -> float:
    """``v = 2 e max_j sum_{i != j} |J_ij|`` in sites per unit time."""
    J = np.abs(np.asarray(couplings, dtype=float))
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("couplings must be a square matrix")
    np.fill_diagonal(J, 0.0)
    return float(2 * np.e * J.sum(axis=1).max())


def light_cone_overlay(couplings: np.ndarray, jbar: float, tj_grid: Sequence[float]) -> list[tuple[float, float]]:
    """``(t * jbar, v * t)`` pairs: the front's site offset from the quench origin."""
    v = light_cone_velocity(couplings)
    return [(float(tj), float(v * tj / jbar)) for tj in tj_grid]


# ---------------------------------------------------------------- direct fidelity estimation


_SIGMAS = "IXYZ"


@dataclass
class DfePlan:
    pauli_strings: list[str]
    weights: list[float]
    chi_psi: list[float]
    n_samples: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "format": DFE_FORMAT,
            "kind": "plan",
            "pauli_strings": self.pauli_strings,
            "weights": self.weights,
            "chi_psi": self.chi_psi,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DfePlan:
        if d.get("format") != DFE_FORMAT or d.get("kind") != "plan":
            raise DataFormatError(f"expected a {DFE_FORMAT!r} plan, got {d.get('format')!r}")
        return cls(d["pauli_strings"], d["weights"], d["chi_psi"], int(d["n_samples"]), int(d["seed"]))


@dataclass
class DfeResult:
    fidelity: float
    stderr: float
    shot_stderr: float
    n_samples: int
    ratios: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": DFE_FORMAT,
            "kind": "result",
            "fidelity": self.fidelity,
            "stderr": self.stderr,
            "shot_stderr": self.shot_stderr,
            "n_samples": self.n_samples,
        }


def _single_copy_maps(A: np.ndarray) -> list[np.ndarray]:
    """``M_s[(a, b), (a', b')] = sum conj(A[a,s,a']) sigma[s,t] A[b,t,b']`` for I, X, Y, Z."""
    Dl, _, Dr = A.shape
    return [np.einsum("asc,st,btd->abcd", A.conj(), PAULI[c], A).reshape(Dl * Dl, Dr * Dr) for c in _SIGMAS]


def dfe_plan(mps: MPS, n_samples: int, seed: int = 0) -> DfePlan:
    """Draw Pauli strings with probability ``chi(P)^2`` by site-wise conditional sampling.

    Marginals come from double-copy transfer matrices
    ``Q = sum_sigma M_sigma (x) M_sigma / 2``; all samples advance together.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mps = normalize(mps)
    N = mps.n_sites
    maps = [_single_copy_maps(A) for A in mps.tensors]
    doubles = [[np.kron(M, M) / 2 for M in ms] for ms in maps]
    rights = [None] * N
    r = np.ones(1, dtype=complex)
    rights[N - 1] = r
    for j in range(N - 1, 0, -1):
        r = sum(doubles[j]) @ r
        rights[j - 1] = r
    rng = np.random.default_rng(derive_seed(seed, "dfe"))
    left = np.ones((n_samples, 1), dtype=complex)
    choice = np.zeros((n_samples, N), dtype=np.int64)
    for j in range(N):
        cand = [left @ Q for Q in doubles[j]]
        w = np.stack([(c @ rights[j]).real for c in cand], axis=1)
        w = np.maximum(w, 0.0)
        w /= w.sum(axis=1, keepdims=True)
        u = rng.random(n_samples)
        pick = np.minimum((np.cumsum(w, axis=1) < u[:, None]).sum(axis=1), 3)
        choice[:, j] = pick
        new = np.stack([cand[s][i] for i, s in enumerate(pick)])
        left = new / np.maximum(np.linalg.norm(new, axis=1, keepdims=True), 1e-300)
    strings = ["".join(_SIGMAS[s] for s in row) for row in choice]
    cache: dict[str, float] = {}
    for s in strings:
        if s not in cache:
            cache[s] = expectation_pauli_mps(mps, s) / np.sqrt(2.0**N)
    chis = [cache[s] for s in strings]
    if any(c == 0 for c in chis):
        raise RuntimeError("drew a Pauli string with vanishing characteristic value")
    return DfePlan(strings, [c * c for c in chis], chis, n_samples, seed)


def _lab_expectations(
    strings: Sequence[str], lab_source
) -> tuple[dict[str, float], dict[str, float]]:
    """``tr(rho P)`` per distinct string and its shot-noise standard error (0 for exact sources)."""
    distinct = sorted(set(strings))
    if isinstance(lab_source, StateVector):
        return {s: pauli_expectation_exact(lab_source, s) for s in distinct}, {}
    if isinstance(lab_source, MPS):
        return {s: expectation_pauli_mps(lab_source, s) for s in distinct}, {}
    if isinstance(lab_source, np.ndarray):
        if lab_source.ndim == 1:
            return {s: pauli_expectation_exact(lab_source, s) for s in distinct}, {}
        return {s: _density_pauli(lab_source, s) for s in distinct}, {}
    records = list(lab_source)
    arrays = _record_arrays(records)
    out, err, missing = {}, {}, []
    for s in distinct:
        active = [i for i, c in enumerate(s) if c != "I"]
        acc = total = 0
        for axes, signs, counts, shots in arrays:
            if all(axes[i] == s[i] for i in active):
                acc += int(counts @ np.prod(signs[:, active], axis=1, dtype=np.int64))
                total += shots
        if total == 0:
            missing.append(s)
            continue
        m = acc / total
        out[s] = m
        err[s] = float(np.sqrt(max(1 - m * m, 0.0) / total))
    if missing:
        raise CoverageError(f"no measurements for Pauli strings {missing}", missing)
    return out, err


def _density_pauli(rho: np.ndarray, word: str) -> float:
    n = len(word)
    T = np.asarray(rho).reshape([2] * (2 * n))
    for j, c in enumerate(word):
        if c != "I":
            T = np.moveaxis(np.tensordot(PAULI[c], T, axes=(1, j)), 0, j)
    return float(np.real(np.trace(T.reshape(1 << n, 1 << n))))


def dfe_estimate(plan: DfePlan, lab_source) -> DfeResult:
    """Mean of ``chi_lab(P) / chi_psi(P)`` over the plan's strings.

    ``lab_source`` may be a StateVector, an MPS, a dense vector or density
    matrix, or shot records whose settings match each string on its support.
    ``stderr`` is the sampling spread; ``shot_stderr`` the propagated shot
    noise of record sources.
    """
    N = len(plan.pauli_strings[0])
    lab, err = _lab_expectations(plan.pauli_strings, lab_source)
    scale = np.sqrt(2.0**N)
    ratios = np.array([lab[s] / (c * scale) for s, c in zip(plan.pauli_strings, plan.chi_psi)])
    n = len(ratios)
    stderr = float(np.std(ratios, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    shot = 0.0
    if err:
        shot = float(np.sqrt(sum((err[s] / (c * scale)) ** 2 for s, c in zip(plan.pauli_strings, plan.chi_psi))) / n)
    return DfeResult(float(np.mean(ratios)), stderr, shot, n, ratios.tolist())


def dfe_records(
    state: StateVector,
    plan: DfePlan,
    shots: int,
    seed: int = 0,
    noise: NoiseModel | None = None,
) -> list[ShotRecord]:
    """One dedicated setting per distinct string (identity sites measured along Z)."""
    out = []
    for i, s in enumerate(sorted(set(plan.pauli_strings))):
        setting = BasisSetting(s.replace("I", "Z"))
        out.append(sample_shots(state, setting, shots, derive_seed(seed, "dfe-shots", i), noise))
    return out


# ---------------------------------------------------------------- CSV / JSON emitters


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def write_magnetization_csv(path: str | Path, rows: Iterable[tuple[int, float, float]]) -> None:
    write_csv(path, ["site", "time", "p_up"], rows)


def write_correlation_csv(path: str | Path, cm: CorrelationMatrix) -> None:
    write_csv(path, ["i", "j", "value", "masked"], ([i, j, v, int(m)] for i, j, v, m in cm.rows()))


def write_negativity_csv(path: str | Path, rows: Iterable[tuple[str, float, float]]) -> None:
    write_csv(path, ["window", "value", "stderr"], rows)


def write_json(path: str | Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")
