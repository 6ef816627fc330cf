"""Window density-matrix estimation from shot records.

Pauli expectations are pooled over every compatible setting, inverted
linearly and projected onto the physical set (positive, unit trace).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from mpstomo.errors import CoverageError, DataFormatError
from mpstomo.exactsim import StateVector, pauli_expectation_exact
from mpstomo.measure import ShotRecord
from mpstomo.paulis import all_words, word_matrix

WINEST_FORMAT = "winest-v1"


@dataclass
class WindowEstimate:
    start: int
    k: int
    rho: np.ndarray
    pauli_means: dict[str, float]
    pauli_stderr: dict[str, float]
    shots_used: dict[str, int] = field(default_factory=dict)

    @property
    def window(self) -> tuple[int, int]:
        return (self.start, self.k)

    @property
    def sites(self) -> list[int]:
        return list(range(self.start, self.start + self.k))

    def to_dict(self) -> dict:
        return {
            "format": WINEST_FORMAT,
            "start": self.start,
            "k": self.k,
            "rho_re": self.rho.real.tolist(),
            "rho_im": self.rho.imag.tolist(),
            "pauli_means": self.pauli_means,
            "pauli_stderr": self.pauli_stderr,
            "shots_used": self.shots_used,
        }

    @classmethod
    def from_dict(cls, d: dict) -> WindowEstimate:
        if d.get("format") != WINEST_FORMAT:
            raise DataFormatError(f"expected format {WINEST_FORMAT!r}, got {d.get('format')!r}")
        return cls(
            start=int(d["start"]),
            k=int(d["k"]),
            rho=np.asarray(d["rho_re"]) + 1j * np.asarray(d["rho_im"]),
            pauli_means={k: float(v) for k, v in d["pauli_means"].items()},
            pauli_stderr={k: float(v) for k, v in d["pauli_stderr"].items()},
            shots_used={k: int(v) for k, v in d.get("shots_used", {}).items()},
        )


def _record_arrays(records: Sequence[ShotRecord]) -> list[tuple[str, np.ndarray, np.ndarray, int]]:
    """Per record: axes, +-1 outcome matrix (distinct outcomes x sites), counts, shots."""
    out = []
    for rec in records:
        keys = list(rec.counts)
        bits = np.frombuffer("".join(keys).encode(), dtype=np.uint8).reshape(len(keys), -1)
        signs = np.where(bits == ord("1"), 1, -1).astype(np.int8)
        out.append((rec.setting.axes, signs, np.array([rec.counts[b] for b in keys], dtype=np.int64), rec.shots))
    return out


def pauli_estimates(
    records: Sequence[ShotRecord], window: tuple[int, int], _arrays=None
) -> tuple[dict[str, float], dict[str, float], dict[str, int]]:
    """Means, standard errors and pooled shot counts for every Pauli word on ``window``.

    A setting contributes to a word when its axes agree with the word's
    non-identity letters inside the window.
    """
    start, k = window
    if not records:
        raise CoverageError("no shot records supplied")
    n = records[0].setting.n_sites
    if start < 0 or start + k > n:
        raise ValueError(f"window {window} outside a chain of {n} sites")
    arrays = _arrays if _arrays is not None else _record_arrays(records)
    means, errs, used = {"I" * k: 1.0}, {"I" * k: 0.0}, {"I" * k: 0}
    missing = []
    for word in all_words(k)[1:]:
        active = [start + j for j, c in enumerate(word) if c != "I"]
        total = 0
        acc = 0
        for axes, signs, counts, shots in arrays:
            if any(axes[j] != word[j - start] for j in active):
                continue
            total += shots
            acc += int(counts @ np.prod(signs[:, active], axis=1, dtype=np.int64))
        if total == 0:
            missing.append(word)
            continue
        m = acc / total
        var = max(1.0 - m * m, 0.0) * (total / (total - 1) if total > 1 else 1.0)
        means[word] = m
        errs[word] = float(np.sqrt(var / total))
        used[word] = total
    if missing:
        raise CoverageError(f"window {window}: no data for words {missing}", missing)
    return means, errs, used


@lru_cache(maxsize=None)
def _word_stack(k: int) -> np.ndarray:
    return np.stack([word_matrix(w) for w in all_words(k)])


def linear_inversion(means: dict[str, float], k: int) -> np.ndarray:
    """``rho = 2^-k sum_w <w> sigma_w`` over all ``4^k`` words (identity coefficient fixed to 1)."""
    words = all_words(k)
    coeffs = np.array([1.0] + [means[w] for w in words[1:]])
    rho = np.tensordot(coeffs, _word_stack(k), axes=(0, 0)) / (1 << k)
    return (rho + rho.conj().T) / 2


def project_simplex(values: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of a real vector onto ``{x >= 0, sum x = total}``."""
    v = np.asarray(values, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    ks = np.arange(1, len(u) + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def project_to_physical(h: np.ndarray) -> np.ndarray:
    """Closest density matrix in Frobenius norm: spectral projection onto the probability simplex."""
    h = (np.asarray(h, dtype=complex) + np.asarray(h, dtype=complex).conj().T) / 2
    tr = np.trace(h).real
    if abs(tr - 1) > 1e-6:
        raise ValueError(f"input trace {tr} differs from 1")
    evals, evecs = np.linalg.eigh(h)
    lam = project_simplex(evals)
    rho = (evecs * lam) @ evecs.conj().T
    return (rho + rho.conj().T) / 2


def estimate_window(records: Sequence[ShotRecord], window: tuple[int, int], _arrays=None) -> WindowEstimate:
    means, errs, used = pauli_estimates(records, window, _arrays)
    rho = project_to_physical(linear_inversion(means, window[1]))
    return WindowEstimate(window[0], window[1], rho, means, errs, used)


def estimate_all_reductions(records: Sequence[ShotRecord], k: int) -> list[WindowEstimate]:
    if not records:
        raise CoverageError("no shot records supplied")
    n = records[0].setting.n_sites
    if not 1 <= k <= n:
        raise ValueError(f"window width k={k} outside [1, {n}]")
    arrays = _record_arrays(records)
    return [estimate_window(records, (i, k), arrays) for i in range(n - k + 1)]


def exact_estimates(state: StateVector, k: int, noise_p: float = 0.0) -> list[WindowEstimate]:
    """Window estimates built from exact Pauli expectations (no sampling).

    With ``noise_p`` the expectations are those of the locally depolarized
    state: a weight-``w`` word is damped by ``(1 - p)^w``.
    """
    n = state.n_sites
    out = []
    for i in range(n - k + 1):
        means, errs = {}, {}
        for word in all_words(k):
            full = "I" * i + word + "I" * (n - i - k)
            weight = sum(c != "I" for c in word)
            means[word] = pauli_expectation_exact(state, full) * (1 - noise_p) ** weight
            errs[word] = 0.0
        rho = linear_inversion(means, k)
        out.append(WindowEstimate(i, k, project_to_physical(rho), means, errs, {}))
    return out


def estimates_from_matrices(rhos: Sequence[np.ndarray]) -> list[WindowEstimate]:
    """Wrap exact window matrices (e.g. from an exact or MPS state) as zero-error estimates."""
    out = []
    for i, rho in enumerate(rhos):
        k = int(round(np.log2(rho.shape[0])))
        vals = np.einsum("wij,ji->w", _word_stack(k), rho).real
        means = dict(zip(all_words(k), vals.tolist()))
        out.append(WindowEstimate(i, k, np.asarray(rho, dtype=complex), means, {w: 0.0 for w in means}, {}))
    return out


def partial_trace_window(rho: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Trace a window matrix down to the local positions ``keep`` (ascending)."""
    k = int(round(np.log2(rho.shape[0])))
    T = np.asarray(rho).reshape([2] * (2 * k))
    drop = [j for j in range(k) if j not in keep]
    for j in sorted(drop, reverse=True):
        T = np.trace(T, axis1=j, axis2=j + T.ndim // 2)
    d = 1 << len(keep)
    return T.reshape(d, d)


def trace_down(estimate: WindowEstimate, offset: int, width: int) -> WindowEstimate:
    """Sub-window ``[start+offset, start+offset+width)`` of an estimate, statistics included.

    The result equals :func:`estimate_window` applied to the same records for
    the narrower window, since every Pauli mean is pooled over the same settings.
    """
    k = estimate.k
    if offset < 0 or offset + width > k:
        raise ValueError("sub-window outside the estimate")
    means, errs, used = {}, {}, {}
    for word in all_words(width):
        big = "I" * offset + word + "I" * (k - offset - width)
        means[word] = estimate.pauli_means[big]
        errs[word] = estimate.pauli_stderr.get(big, 0.0)
        used[word] = estimate.shots_used.get(big, 0)
    # rebuilding from the means reproduces the direct estimate of the narrower window
    rho = project_to_physical(linear_inversion(means, width))
    return WindowEstimate(estimate.start + offset, width, rho, means, errs, used)


def narrow_estimates(estimates: Sequence[WindowEstimate], width: int) -> list[WindowEstimate]:
    """All width-``width`` windows derived from a full set of wider window estimates."""
    k = estimates[0].k
    if width > k:
        raise ValueError("cannot widen estimates")
    if width == k:
        return list(estimates)
    n = estimates[-1].start + k
    out = []
    for i in range(n - width + 1):
        src = min(i, len(estimates) - 1)
        out.append(trace_down(estimates[src], i - estimates[src].start, width))
    return out


def overlap_consistency(estimates: Sequence[WindowEstimate]) -> list[float]:
    """Trace distances between neighbouring windows on their shared sites (diagnostic only)."""
    out = []
    for a, b in zip(estimates, estimates[1:]):
        ra = partial_trace_window(a.rho, list(range(1, a.k)))
        rb = partial_trace_window(b.rho, list(range(0, b.k - 1)))
        out.append(float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(ra - rb)))))
    return out
