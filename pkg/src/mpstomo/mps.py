"""Matrix product states: canonical forms, compression, reductions and observables.

Tensors have index order (left bond, physical, right bond) with boundary bonds
of dimension 1 and physical ordering (up, down). MPS values are treated as
immutable: every operation returns a new object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mpstomo.errors import ConvergenceError, DataFormatError, SizeLimitError
from mpstomo.paulis import PAULI, validate_word

MPS_FORMAT = "mps-v1"


@dataclass(frozen=True)
class MPS:
    tensors: tuple[np.ndarray, ...]
    canonical_center: int | None = None

    def __post_init__(self) -> None:
        tensors = tuple(np.asarray(t, dtype=complex) for t in self.tensors)
        if not tensors:
            raise ValueError("an MPS needs at least one site")
        for j, t in enumerate(tensors):
            if t.ndim != 3 or t.shape[1] != 2:
                raise ValueError(f"tensor {j} has shape {t.shape}, expected (Dl, 2, Dr)")
        if tensors[0].shape[0] != 1 or tensors[-1].shape[2] != 1:
            raise ValueError("boundary bond dimensions must be 1")
        for j in range(len(tensors) - 1):
            if tensors[j].shape[2] != tensors[j + 1].shape[0]:
                raise ValueError(f"bond mismatch between sites {j} and {j + 1}")
        object.__setattr__(self, "tensors", tensors)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        """Internal bond dimensions D_1 .. D_(N-1)."""
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def to_dict(self) -> dict:
        return {
            "format": MPS_FORMAT,
            "n_sites": self.n_sites,
            "bond_dims": self.bond_dims,
            "canonical_center": self.canonical_center,
            "tensors": [
                {"shape": list(t.shape), "re": t.real.ravel().tolist(), "im": t.imag.ravel().tolist()}
                for t in self.tensors
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> MPS:
        if d.get("format") != MPS_FORMAT:
            raise DataFormatError(f"expected format {MPS_FORMAT!r}, got {d.get('format')!r}")
        tensors = [
            (np.asarray(t["re"]) + 1j * np.asarray(t["im"])).reshape(t["shape"]) for t in d["tensors"]
        ]
        return cls(tuple(tensors), d.get("canonical_center"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> MPS:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SchmidtSpectrum:
    cut: int
    values: np.ndarray = field(repr=False)


# ---------------------------------------------------------------- constructors


def product_mps(vectors: Sequence[np.ndarray]) -> MPS:
    """Product state from one length-2 vector per site."""
    tensors = []
    for v in vectors:
        v = np.asarray(v, dtype=complex)
        tensors.append((v / np.linalg.norm(v)).reshape(1, 2, 1))
    return MPS(tuple(tensors))


def basis_mps(bits: Sequence[int]) -> MPS:
    """Computational basis state; ``bits[j]`` is 0 for up and 1 for down."""
    return product_mps([np.eye(2)[b] for b in bits])


def capped_bond_dims(n_sites: int, bond_dim: int | Sequence[int]) -> list[int]:
    """Bond dimensions capped by the Hilbert-space dimension on either side of each cut."""
    if np.isscalar(bond_dim):
        target = [int(bond_dim)] * (n_sites - 1)
    else:
        target = [int(b) for b in bond_dim]
        if len(target) != n_sites - 1:
            raise ValueError(f"bond profile needs {n_sites - 1} entries, got {len(target)}")
    return [max(1, min(target[j], 2 ** min(j + 1, n_sites - j - 1, 30))) for j in range(n_sites - 1)]


def random_mps(n_sites: int, bond_dim: int, rng: np.random.Generator) -> MPS:
    dims = [1] + capped_bond_dims(n_sites, bond_dim) + [1]
    tensors = [
        rng.normal(size=(dims[j], 2, dims[j + 1])) + 1j * rng.normal(size=(dims[j], 2, dims[j + 1]))
        for j in range(n_sites)
    ]
    return normalize(MPS(tuple(tensors)))


def pad_mps(mps: MPS, bond_dim: int, rng: np.random.Generator | None = None, noise: float = 0.0) -> MPS:
    """Embed ``mps`` into larger bonds (zero padded, optionally with small random entries)."""
    n = mps.n_sites
    dims = [1] + [max(a, b) for a, b in zip(mps.bond_dims, capped_bond_dims(n, bond_dim))] + [1]
    tensors = []
    for j, t in enumerate(mps.tensors):
        big = np.zeros((dims[j], 2, dims[j + 1]), dtype=complex)
        big[: t.shape[0], :, : t.shape[2]] = t
        if noise and rng is not None:
            big += noise * (rng.normal(size=big.shape) + 1j * rng.normal(size=big.shape))
        tensors.append(big)
    return normalize(MPS(tuple(tensors)))


# ---------------------------------------------------------------- gauge


def _qr_positive(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Q, R = np.linalg.qr(M)
    d = np.diag(R)
    phase = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1), 1)
    return Q * phase, (R.T / phase).T


def left_orthonormalize(A: np.ndarray, nxt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """QR-split ``A`` into a left isometry and push the remainder into ``nxt``."""
    Dl, d, Dr = A.shape
    try:
        Q, R = _qr_positive(A.reshape(Dl * d, Dr))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceError(f"QR failed: {exc}") from exc
    return Q.reshape(Dl, d, -1), np.tensordot(R, nxt, axes=(1, 0))


def right_orthonormalize(A: np.ndarray, prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """LQ-split ``A`` into a right isometry and push the remainder into ``prev``."""
    Dl, d, Dr = A.shape
    try:
        Q, R = _qr_positive(A.reshape(Dl, d * Dr).T)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise ConvergenceError(f"LQ failed: {exc}") from exc
    B = Q.T.reshape(-1, d, Dr)
    return B, np.tensordot(prev, R.T, axes=(2, 0))


def canonicalize(mps: MPS, center: int) -> MPS:
    """Mixed canonical form with orthogonality center ``center``; the norm sits in the center tensor."""
    n = mps.n_sites
    if not 0 <= center < n:
        raise ValueError(f"center {center} outside [0, {n})")
    t = list(mps.tensors)
    for j in range(center):
        t[j], t[j + 1] = left_orthonormalize(t[j], t[j + 1])
    for j in range(n - 1, center, -1):
        t[j], t[j - 1] = right_orthonormalize(t[j], t[j - 1])
    return MPS(tuple(t), center)


def norm_squared(mps: MPS) -> float:
    return float(np.real(overlap(mps, mps)))


def normalize(mps: MPS) -> MPS:
    nrm = np.sqrt(norm_squared(mps))
    if nrm == 0:
        raise ValueError("cannot normalize the zero state")
    c = mps.canonical_center if mps.canonical_center is not None else 0
    t = list(mps.tensors)
    t[c] = t[c] / nrm
    return MPS(tuple(t), mps.canonical_center)


def isometry_error(mps: MPS) -> float:
    """Largest Frobenius deviation from the isometry conditions implied by ``canonical_center``."""
    c = mps.canonical_center
    if c is None:
        raise ValueError("MPS carries no canonical center")
    worst = 0.0
    for j, A in enumerate(mps.tensors):
        if j < c:
            M = A.reshape(-1, A.shape[2])
            worst = max(worst, np.linalg.norm(M.conj().T @ M - np.eye(M.shape[1])))
        elif j > c:
            M = A.reshape(A.shape[0], -1)
            worst = max(worst, np.linalg.norm(M @ M.conj().T - np.eye(M.shape[0])))
    return float(worst)


# ---------------------------------------------------------------- truncation


def _truncate(S: np.ndarray, max_keep: int, tol: float) -> int:
    """Number of singular values to keep at one cut."""
    w = S**2 / np.sum(S**2)
    keep = min(max_keep, int(np.sum(S > 1e-14 * S[0])))
    keep = max(keep, 1)
    # drop the tail while the discarded relative weight stays within tol
    tail = np.cumsum(w[::-1])[::-1]  # tail[i] = weight of values i..end
    while keep > 1 and tail[keep - 1] <= tol:
        keep -= 1
    return keep


def compress(mps: MPS, max_bond: int | Sequence[int], tol: float = 0.0) -> tuple[MPS, float]:
    """SVD truncation sweep; returns the normalized result and the total discarded weight.

    ``max_bond`` is a single bound or one bound per internal bond. At every
    cut at most ``max_bond`` Schmidt values are kept and trailing values whose
    summed squared weight is at most ``tol`` are discarded. Degenerate values
    are kept in decomposition order.
    """
    n = mps.n_sites
    limits = capped_bond_dims(n, max_bond) if not np.isscalar(max_bond) else [int(max_bond)] * (n - 1)
    if any(b < 1 for b in limits):
        raise ValueError("max_bond must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    t = list(canonicalize(mps, 0).tensors)
    t[0] = t[0] / np.linalg.norm(t[0])
    discarded = 0.0
    for j in range(n - 1):
        Dl, d, Dr = t[j].shape
        U, S, Vh = np.linalg.svd(t[j].reshape(Dl * d, Dr), full_matrices=False)
        keep = _truncate(S, limits[j], tol)
        discarded += float(np.sum(S[keep:] ** 2) / np.sum(S**2))
        S_kept = S[:keep] / np.linalg.norm(S[:keep])
        t[j] = U[:, :keep].reshape(Dl, d, keep)
        t[j + 1] = np.tensordot(S_kept[:, None] * Vh[:keep], t[j + 1], axes=(1, 0))
    return MPS(tuple(t), n - 1), discarded


def mps_from_statevector(v, tol: float = 0.0, max_bond: int | None = None) -> MPS:
    """Sequential SVD of a dense vector; total discarded weight stays within ``tol``."""
    from mpstomo.exactsim import StateVector

    psi = v.to_full() if isinstance(v, StateVector) else np.asarray(v, dtype=complex)
    n = int(round(np.log2(psi.size)))
    if 1 << n != psi.size:
        raise ValueError("state-vector length must be a power of 2")
    if n > 16:
        raise SizeLimitError("mps_from_statevector is limited to N <= 16")
    psi = psi / np.linalg.norm(psi)
    per_cut = tol / max(n - 1, 1)
    tensors = []
    M = psi.reshape(1, -1)
    for _ in range(n - 1):
        Dl = M.shape[0]
        M = M.reshape(Dl * 2, -1)
        U, S, Vh = np.linalg.svd(M, full_matrices=False)
        keep = _truncate(S, max_bond or len(S), per_cut)
        tensors.append(U[:, :keep].reshape(Dl, 2, keep))
        M = S[:keep, None] * Vh[:keep]
    tensors.append(M.reshape(-1, 2, 1))
    return normalize(MPS(tuple(tensors), n - 1))


def to_dense(mps: MPS) -> np.ndarray:
    if mps.n_sites > 20:
        raise SizeLimitError("dense contraction limited to N <= 20")
    v = mps.tensors[0]
    for A in mps.tensors[1:]:
        v = np.tensordot(v, A, axes=(-1, 0))
    return v.reshape(-1)


# ---------------------------------------------------------------- contractions


def _transfer(E: np.ndarray, A: np.ndarray, B: np.ndarray, op: np.ndarray | None = None) -> np.ndarray:
    """Left-to-right transfer: E'[a',b'] = sum conj(A[a,s,a']) op[s,t] E[a,b] B[b,t,b']."""
    if op is not None:
        B = np.einsum("st,btc->bsc", op, B)
    tmp = np.tensordot(E, B, axes=(1, 0))  # a, s, b'
    return np.tensordot(A.conj(), tmp, axes=([0, 1], [0, 1]))


def overlap(a: MPS, b: MPS) -> complex:
    """<a|b> by transfer-matrix contraction."""
    if a.n_sites != b.n_sites:
        raise ValueError(f"length mismatch: {a.n_sites} vs {b.n_sites}")
    E = np.ones((1, 1), dtype=complex)
    for A, B in zip(a.tensors, b.tensors):
        E = _transfer(E, A, B)
    return complex(E[0, 0])


def expectation_pauli_mps(mps: MPS, pauli: str) -> float:
    word = validate_word(pauli, mps.n_sites)
    E = np.ones((1, 1), dtype=complex)
    N = np.ones((1, 1), dtype=complex)
    for A, c in zip(mps.tensors, word):
        E = _transfer(E, A, A, None if c == "I" else PAULI[c])
        N = _transfer(N, A, A)
    return float((E[0, 0] / N[0, 0]).real)


def expectation_local_mps(mps: MPS, ops: dict[int, np.ndarray]) -> complex:
    """<prod_j ops[j]> for arbitrary single-site operators on a subset of sites."""
    E = np.ones((1, 1), dtype=complex)
    N = np.ones((1, 1), dtype=complex)
    for j, A in enumerate(mps.tensors):
        E = _transfer(E, A, A, ops.get(j))
        N = _transfer(N, A, A)
    return complex(E[0, 0] / N[0, 0])


def _window_tensor(tensors: Sequence[np.ndarray]) -> np.ndarray:
    """Contract consecutive site tensors to shape (Dl, 2^k, Dr)."""
    W = tensors[0]
    for A in tensors[1:]:
        W = np.tensordot(W, A, axes=(-1, 0))
        W = W.reshape(W.shape[0], -1, W.shape[-1])
    return W


def local_reductions_mps(mps: MPS, k: int) -> list[np.ndarray]:
    """Reduced density matrices of all ``N-k+1`` windows of ``k`` consecutive sites."""
    n = mps.n_sites
    if not 1 <= k <= min(n, 8):
        raise ValueError(f"window width k={k} outside [1, {min(n, 8)}]")
    t = canonicalize(mps, 0).tensors
    lefts = [np.ones((1, 1), dtype=complex)]
    for j in range(n - k):
        lefts.append(_transfer(lefts[-1], t[j], t[j]))
    out = []
    for i in range(n - k + 1):
        W = _window_tensor(t[i : i + k])  # (a, x, b); right side is right-canonical
        rho = np.einsum("ca,axb,cyb->xy", lefts[i], W, W.conj())
        rho = (rho + rho.conj().T) / 2
        out.append(rho / np.trace(rho).real)
    return out


def schmidt_spectrum(mps: MPS, cut: int) -> SchmidtSpectrum:
    """Schmidt values across the bond after the first ``cut`` sites."""
    n = mps.n_sites
    if not 1 <= cut <= n - 1:
        raise ValueError(f"cut {cut} outside [1, {n - 1}]")
    C = canonicalize(mps, cut).tensors[cut]
    S = np.linalg.svd(C.reshape(C.shape[0], -1), compute_uv=False)
    S = S / np.linalg.norm(S)
    return SchmidtSpectrum(cut, S)


def entropy_bits(schmidt_values: np.ndarray) -> float:
    p = np.asarray(schmidt_values) ** 2
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log2(p)) + 0.0)


def half_chain_entropy(mps: MPS) -> float:
    """Von Neumann entropy in bits across the central bond (``N // 2`` sites on the left)."""
    if mps.n_sites < 2:
        return 0.0
    return entropy_bits(schmidt_spectrum(mps, mps.n_sites // 2).values)
