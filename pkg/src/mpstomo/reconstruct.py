"""Global MPS estimates from window estimates.

Stage 1 fits an MPS to the estimated window density matrices by single-site
sweeps that minimise ``sum_i ||rho_i(psi) - rho_hat_i||_F^2``. Stage 2
optionally refines the fit by maximising the likelihood of the raw shot
records.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from mpstomo.exactsim import StateVector, depolarize_reduction, evolve_exact, exact_local_reductions
from mpstomo.localtomo import WindowEstimate, estimates_from_matrices, narrow_estimates
from mpstomo.measure import ShotRecord, derive_seed
from mpstomo.mps import (
    MPS,
    canonicalize,
    left_orthonormalize,
    local_reductions_mps,
    norm_squared,
    pad_mps,
    product_mps,
    random_mps,
    right_orthonormalize,
)
from mpstomo.paulis import EIGENBASIS
from mpstomo.spinmodel import ChainSpec, neel_state

log = logging.getLogger(__name__)

RECON_FORMAT = "recon-v1"
PROB_FLOOR = 1e-12


@dataclass
class ReconstructionOptions:
    bond_dim: int | None = None  # None -> 2**(k-1)
    max_sweeps: int = 200
    cost_tol: float = 1e-9
    restarts: int = 5
    seed: int = 0
    stage2_enabled: bool = False
    stage2_max_iters: int = 50
    local_steps: int = 8
    threads: int = 1

    def __post_init__(self) -> None:
        if self.bond_dim is not None and self.bond_dim < 1:
            raise ValueError("bond_dim must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")

    def resolved_bond_dim(self, k: int) -> int:
        return self.bond_dim if self.bond_dim is not None else 2 ** (k - 1)


@dataclass
class ReconstructionReport:
    mps: MPS
    final_cost: float
    per_window_residuals: list[float]
    sweeps_used: int
    restart_costs: list[float]
    bond_dim: int
    k: int
    cost_history: list[float] = field(default_factory=list)
    stage2_loglik: float | None = None
    stage2_floored: int = 0
    stage2_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": RECON_FORMAT,
            "mps": self.mps.to_dict(),
            "final_cost": self.final_cost,
            "per_window_residuals": self.per_window_residuals,
            "sweeps_used": self.sweeps_used,
            "restart_costs": self.restart_costs,
            "bond_dim": self.bond_dim,
            "k": self.k,
            "cost_history": self.cost_history,
            "stage2_loglik": self.stage2_loglik,
            "stage2_floored": self.stage2_floored,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ReconstructionReport:
        from mpstomo.errors import DataFormatError

        if d.get("format") != RECON_FORMAT:
            raise DataFormatError(f"expected format {RECON_FORMAT!r}, got {d.get('format')!r}")
        return cls(
            mps=MPS.from_dict(d["mps"]),
            final_cost=d["final_cost"],
            per_window_residuals=d["per_window_residuals"],
            sweeps_used=d["sweeps_used"],
            restart_costs=d["restart_costs"],
            bond_dim=d["bond_dim"],
            k=d["k"],
            cost_history=d.get("cost_history", []),
            stage2_loglik=d.get("stage2_loglik"),
            stage2_floored=d.get("stage2_floored", 0),
        )


def _check_estimates(estimates: Sequence[WindowEstimate], n_sites: int | None = None) -> int:
    if not estimates:
        raise ValueError("no window estimates supplied")
    k = estimates[0].k
    for e in estimates:
        if e.k != k:
            raise ValueError("all window estimates must share one width")
        rho = e.rho
        if np.linalg.norm(rho - rho.conj().T) > 1e-10:
            raise ValueError(f"window {e.window}: estimate is not Hermitian")
        if abs(np.trace(rho).real - 1) > 1e-10:
            raise ValueError(f"window {e.window}: estimate trace differs from 1")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise ValueError(f"window {e.window}: estimate is not positive semidefinite")
    n = estimates[-1].start + k
    if [e.start for e in estimates] != list(range(n - k + 1)):
        raise ValueError("window estimates must cover starts 0..N-k in order")
    if n_sites is not None and n != n_sites:
        raise ValueError(f"estimates span {n} sites, MPS has {n_sites}")
    return k


def reduction_cost(mps: MPS, estimates: Sequence[WindowEstimate]) -> float:
    """``sum_i ||rho_i(psi) - rho_hat_i||_F^2`` over all windows."""
    k = _check_estimates(estimates, mps.n_sites)
    return float(sum(r**2 for r in _residuals(mps, estimates, k)))


def _residuals(mps: MPS, estimates: Sequence[WindowEstimate], k: int) -> list[float]:
    rhos = local_reductions_mps(mps, k)
    return [float(np.linalg.norm(r - e.rho)) for r, e in zip(rhos, estimates)]


# ---------------------------------------------------------------- local problem


def _window_block(tensors: Sequence[np.ndarray]) -> np.ndarray:
    """Contract site tensors into shape (Dl, 2^m, Dr)."""
    W = tensors[0]
    for A in tensors[1:]:
        W = np.tensordot(W, A, axes=(-1, 0)).reshape(W.shape[0], -1, A.shape[-1])
    return W


class _LocalProblem:
    """Cost ``sum_i ||rho_i(a)/|a|^2 - target_i||^2`` as a function of the centre tensor.

    ``tensors`` must be in mixed canonical form centred at ``j``, so windows
    see identity environments on their far sides. Windows left of ``j`` use a
    right environment that depends on the centre tensor, windows right of
    ``j`` a left one; windows containing ``j`` are contracted directly. The
    gradient back-propagates residuals through the same environments.
    """

    def __init__(self, tensors: Sequence[np.ndarray], j: int, k: int, targets: np.ndarray) -> None:
        N = len(tensors)
        self.shape = tensors[j].shape
        Dl, _, Dr = self.shape
        self.j, self.k, self.N = j, k, N
        self.targets = targets
        self.tensors = tensors
        self.left_w, self.mid_w, self.right_w = [], [], []
        for i in range(N - k + 1):
            last = i + k - 1
            if last < j:
                self.left_w.append((i, last, _window_block(tensors[i : last + 1])))
            elif i > j:
                self.right_w.append((i, _window_block(tensors[i : last + 1])))
            else:
                lb = _window_block(tensors[i:j]) if j > i else np.eye(Dl)[:, None, :]
                rb = _window_block(tensors[j + 1 : last + 1]) if last > j else np.eye(Dr)[:, None, :]
                self.mid_w.append((i, lb, rb))

    def forward(self, A: np.ndarray) -> tuple[np.ndarray, dict]:
        """Unnormalized window reductions for centre tensor ``A``."""
        dk = 1 << self.k
        out = np.empty((self.N - self.k + 1, dk, dk), dtype=complex)
        cache = {}
        if self.left_w:
            Am = A.reshape(A.shape[0], -1)
            E = Am @ Am.conj().T
            envs = {self.j - 1: E}
            for m in range(self.j - 1, self.left_w[0][1], -1):
                B = self.tensors[m]
                g = B.shape[0]
                E = (B.reshape(-1, B.shape[2]) @ E).reshape(g, -1) @ B.conj().reshape(g, -1).T
                envs[m - 1] = E
            for i, last, W in self.left_w:
                V = np.tensordot(W, envs[last], axes=(2, 0))
                out[i] = np.tensordot(V, W.conj(), axes=((0, 2), (0, 2)))
        if self.right_w:
            Am = A.reshape(-1, A.shape[2])
            L = Am.T @ Am.conj()
            envs = {self.j + 1: L}
            for m in range(self.j + 1, self.right_w[-1][0]):
                C = self.tensors[m]
                b = C.shape[2]
                L = C.reshape(-1, b).T @ np.tensordot(L, C.conj(), axes=(1, 0)).reshape(-1, b)
                envs[m + 1] = L
            for i, W in self.right_w:
                V = np.tensordot(envs[i], W, axes=(0, 0))
                out[i] = np.tensordot(V, W.conj(), axes=((0, 2), (0, 2)))
        for i, lb, rb in self.mid_w:
            T = np.tensordot(np.tensordot(lb, A, axes=(2, 0)), rb, axes=(3, 0))  # (L, x1, s, x2, R)
            F = T.transpose(1, 2, 3, 0, 4).reshape(dk, -1)
            out[i] = F @ F.conj().T
            cache[i] = T
        return out, cache

    def adjoint(self, A: np.ndarray, R: np.ndarray, cache: dict) -> np.ndarray:
        """Derivative of ``sum_i tr(R_i rho_i)`` with respect to ``conj(A)`` (``R_i`` Hermitian)."""
        g = np.zeros_like(A)
        dk = 1 << self.k
        if self.left_w:
            by_last = {}
            for i, last, W in self.left_w:
                RW = np.tensordot(R[i], W, axes=(1, 1))
                by_last[last] = by_last.get(last, 0) + np.tensordot(W.conj(), RW, axes=((0, 1), (1, 0)))
            Y = 0
            for m in range(self.left_w[0][1], self.j):
                Y = Y + by_last.get(m, 0)
                if m < self.j - 1:
                    B = self.tensors[m + 1]
                    Y = np.tensordot(B.conj(), np.tensordot(Y, B, axes=(1, 0)), axes=((0, 1), (0, 1)))
            g += np.tensordot(Y, A, axes=(1, 0))
        if self.right_w:
            by_start = {}
            for i, W in self.right_w:
                RW = np.tensordot(R[i], W, axes=(1, 1))
                by_start[i] = np.tensordot(W.conj(), RW, axes=((1, 2), (0, 2)))
            Z = 0
            for m in range(self.right_w[-1][0], self.j, -1):
                Z = Z + by_start.get(m, 0)
                if m > self.j + 1:
                    C = self.tensors[m - 1]
                    Z = np.tensordot(C.conj(), np.tensordot(C, Z, axes=(2, 1)), axes=((1, 2), (1, 2)))
            g += np.tensordot(A, Z, axes=(2, 1))
        for i, lb, rb in self.mid_w:
            T = cache[i]
            RF = (R[i] @ T.transpose(1, 2, 3, 0, 4).reshape(dk, -1)).reshape(
                T.shape[1], T.shape[2], T.shape[3], T.shape[0], T.shape[4]
            )
            X = np.tensordot(lb.conj(), RF, axes=((0, 1), (3, 0)))
            g += np.tensordot(X, rb.conj(), axes=((2, 3), (1, 2)))
        return g

    def cost(self, a: np.ndarray) -> float:
        out, _ = self.forward(a.reshape(self.shape))
        r = out / np.vdot(a, a).real - self.targets
        return float(np.vdot(r, r).real)

    def cost_grad(self, a: np.ndarray) -> tuple[float, np.ndarray]:
        A = a.reshape(self.shape)
        nrm = np.vdot(a, a).real
        out, cache = self.forward(A)
        f = out / nrm
        r = f - self.targets
        Ha = self.adjoint(A, r, cache).reshape(-1)
        g = (2.0 / nrm) * (Ha - np.vdot(r, f).real * a)
        return float(np.vdot(r, r).real), g


def _descend(problem: _LocalProblem, a: np.ndarray, steps: int) -> tuple[np.ndarray, float]:
    """Steepest descent with Armijo backtracking; never increases the cost."""
    a = a / np.linalg.norm(a)
    c, g = problem.cost_grad(a)
    eta = 1.0
    prev_a = prev_g = None
    for _ in range(steps):
        gg = np.vdot(g, g).real
        if gg < 1e-30 or c < 1e-30:
            break
        if prev_a is not None:
            s = a - prev_a
            y = g - prev_g
            sy = np.vdot(s, y).real
            if sy > 0:
                eta = np.vdot(s, s).real / sy
        accepted = False
        for _ in range(40):
            trial = a - eta * g
            trial = trial / np.linalg.norm(trial)
            ct = problem.cost(trial)
            if ct <= c - 1e-4 * eta * 2 * gg:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        prev_a, prev_g = a, g
        a = trial
        c_new, g = problem.cost_grad(a)
        if c - c_new <= 1e-15 * max(c, 1e-300):
            c = c_new
            break
        c = c_new
    return a, c


def _sweep(tensors: list[np.ndarray], targets: np.ndarray, k: int, steps: int) -> float:
    """One left-to-right then right-to-left pass; ``tensors`` start centred at site 0."""
    N = len(tensors)
    order = list(range(N)) + list(range(N - 1, -1, -1))
    direction = [+1] * N + [-1] * N
    cost = np.inf
    for j, dirn in zip(order, direction):
        prob = _LocalProblem(tensors, j, k, targets)
        a, cost = _descend(prob, tensors[j].reshape(-1), steps)
        A = a.reshape(tensors[j].shape)
        if dirn > 0 and j < N - 1:
            tensors[j], tensors[j + 1] = left_orthonormalize(A, tensors[j + 1])
        elif dirn < 0 and j > 0:
            tensors[j], tensors[j - 1] = right_orthonormalize(A, tensors[j - 1])
        else:
            tensors[j] = A
    return float(cost)


def _initial_states(estimates: Sequence[WindowEstimate], opts: ReconstructionOptions, D: int) -> list[MPS]:
    n = estimates[-1].start + estimates[0].k
    singles = narrow_estimates(estimates, 1)
    vecs = [np.linalg.eigh(e.rho)[1][:, -1] for e in singles]
    out = []
    for r in range(opts.restarts):
        rng = np.random.default_rng(derive_seed(opts.seed, "restart", r))
        if r == 0:
            out.append(pad_mps(product_mps(vecs), D, rng, noise=1e-3))
        else:
            out.append(random_mps(n, D, rng))
    return out


def _fit_one(start: MPS, targets: np.ndarray, k: int, opts: ReconstructionOptions) -> tuple[MPS, list[float]]:
    tensors = list(canonicalize(start, 0).tensors)
    tensors[0] = tensors[0] / np.linalg.norm(tensors[0])
    history = []
    prev = np.inf
    for _ in range(opts.max_sweeps):
        cost = _sweep(tensors, targets, k, opts.local_steps)
        history.append(cost)
        if cost < 1e-14 or (prev - cost) <= opts.cost_tol * max(prev, 1e-300) and np.isfinite(prev):
            break
        prev = cost
    return MPS(tuple(tensors), 0), history


def reconstruct_variational(
    estimates: Sequence[WindowEstimate], opts: ReconstructionOptions | None = None
) -> ReconstructionReport:
    """Best-of-restarts MPS fit to window density matrices.

    Restart 0 starts from the product state of the dominant single-site
    eigenvectors, the rest from seeded random tensors. Ties in final cost go
    to the lowest restart index.
    """
    opts = opts or ReconstructionOptions()
    k = _check_estimates(estimates)
    D = opts.resolved_bond_dim(k)
    targets = np.stack([e.rho for e in estimates])
    starts = _initial_states(estimates, opts, D)
    if opts.threads > 1:
        with ThreadPoolExecutor(opts.threads) as pool:
            fits = list(pool.map(lambda s: _fit_one(s, targets, k, opts), starts))
    else:
        fits = [_fit_one(s, targets, k, opts) for s in starts]
    restart_costs = [h[-1] for _, h in fits]
    best = int(np.argmin(restart_costs))
    mps, history = fits[best]
    residuals = _residuals(mps, estimates, k)
    return ReconstructionReport(
        mps=mps,
        final_cost=float(sum(r**2 for r in residuals)),
        per_window_residuals=residuals,
        sweeps_used=len(history),
        restart_costs=[float(c) for c in restart_costs],
        bond_dim=D,
        k=k,
        cost_history=[float(c) for c in history],
    )


# ---------------------------------------------------------------- stage 2: likelihood


class _RecordData:
    """Outcome projectors of one shot record: ``proj[j][o]`` is the bra of outcome ``o`` at site ``j``."""

    def __init__(self, rec: ShotRecord) -> None:
        rec.validate()
        keys = list(rec.counts)
        bits = np.frombuffer("".join(keys).encode(), dtype=np.uint8).reshape(len(keys), -1) - ord("0")
        cols = 1 - bits.astype(np.int64)  # '1' is the +1 eigenvector, column 0
        self.counts = np.array([rec.counts[b] for b in keys], dtype=float)
        self.proj = [EIGENBASIS[a].conj().T[cols[:, j]] for j, a in enumerate(rec.setting.axes)]


def _site_maps(A: np.ndarray, proj: np.ndarray) -> np.ndarray:
    """Per-outcome transfer matrices ``sum_s proj[o, s] A[:, s, :]`` of shape (n_out, Dl, Dr)."""
    return np.einsum("os,asb->oab", proj, A)


def _right_partials(tensors: Sequence[np.ndarray], data: _RecordData) -> list[np.ndarray]:
    N = len(tensors)
    r = [None] * N
    cur = np.ones((len(data.counts), 1), dtype=complex)
    r[N - 1] = cur
    for j in range(N - 1, 0, -1):
        cur = np.einsum("oab,ob->oa", _site_maps(tensors[j], data.proj[j]), cur)
        r[j - 1] = cur
    return r


def _left_partials(tensors: Sequence[np.ndarray], data: _RecordData) -> list[np.ndarray]:
    N = len(tensors)
    l = [None] * N
    cur = np.ones((len(data.counts), 1), dtype=complex)
    l[0] = cur
    for j in range(N - 1):
        cur = np.einsum("oa,oab->ob", cur, _site_maps(tensors[j], data.proj[j]))
        l[j + 1] = cur
    return l


class _LikelihoodSite:
    """Log-likelihood as a function of the centre tensor (mixed canonical form, so the norm is ``|a|^2``).

    Outcomes of all records are stacked: ``lp[o] = l[o] (x) proj[o]`` and
    ``r[o]`` give the amplitude ``z_o = lp[o] . A . r[o]``.
    """

    def __init__(self, shape, counts: np.ndarray, l: np.ndarray, proj: np.ndarray, r: np.ndarray) -> None:
        self.shape = shape
        self.counts = counts
        self.lp = (l[:, :, None] * proj[:, None, :]).reshape(len(counts), -1)
        self.r = r

    def _probs(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = np.sum((self.lp @ a.reshape(-1, self.shape[2])) * self.r, axis=1)
        return z, np.abs(z) ** 2 / np.vdot(a, a).real

    def value(self, a: np.ndarray) -> float:
        _, prob = self._probs(a)
        return float(self.counts @ np.log(np.maximum(prob, PROB_FLOOR)))

    def value_grad(self, a: np.ndarray) -> tuple[float, np.ndarray]:
        z, prob = self._probs(a)
        live = prob > PROB_FLOOR
        val = float(self.counts @ np.log(np.maximum(prob, PROB_FLOOR)))
        # floored terms are constant in a neighbourhood and contribute no gradient
        w = np.where(live, self.counts / np.where(live, z.conj(), 1.0), 0.0)
        g = (self.lp.conj().T @ (w[:, None] * self.r.conj())).reshape(-1)
        g -= float(self.counts[live].sum()) * a / np.vdot(a, a).real
        return val, g


def _ascend(site: _LikelihoodSite, a: np.ndarray, steps: int) -> tuple[np.ndarray, float]:
    """Gradient ascent with backtracking; only strict improvements are accepted."""
    a = a / np.linalg.norm(a)
    val, g = site.value_grad(a)
    eta = 1.0
    for _ in range(steps):
        gg = np.vdot(g, g).real
        if gg < 1e-24:
            break
        eta = min(eta * 2.0, 1.0 / np.sqrt(gg))
        accepted = False
        for _ in range(30):
            trial = a + eta * g
            trial = trial / np.linalg.norm(trial)
            vt = site.value(trial)
            if vt >= val + 1e-4 * eta * gg:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        a = trial
        val, g = site.value_grad(a)
    return a, val


def log_likelihood(mps: MPS, records: Sequence[ShotRecord]) -> tuple[float, int]:
    """``sum count * log p(outcome | setting)`` with probabilities floored at ``PROB_FLOOR``.

    Returns the log-likelihood and the number of floored outcome terms.
    """
    tensors = list(mps.tensors)
    nrm = norm_squared(mps)
    total, floored = 0.0, 0
    for rec in records:
        data = _RecordData(rec)
        z = _left_partials(tensors, data)[-1]
        z = np.einsum("oa,oab->ob", z, _site_maps(tensors[-1], data.proj[-1]))[:, 0]
        prob = np.abs(z) ** 2 / nrm
        floored += int(np.count_nonzero(prob <= PROB_FLOOR))
        total += float(data.counts @ np.log(np.maximum(prob, PROB_FLOOR)))
    return total, floored


def refine_likelihood(
    mps: MPS, records: Sequence[ShotRecord], opts: ReconstructionOptions | None = None
) -> ReconstructionReport:
    """Stage 2: sweep-wise maximisation of the shot-record likelihood.

    The start is ``mps`` padded to the target bond dimension with a small
    seeded perturbation, so that outcomes with vanishing model probability
    still carry a gradient. Local updates only accept likelihood increases.
    The returned report has no reduction cost (``final_cost`` is NaN) until
    the caller evaluates it against window estimates.
    """
    opts = opts or ReconstructionOptions()
    if not records:
        raise ValueError("no shot records supplied")
    N = mps.n_sites
    for rec in records:
        if rec.setting.n_sites != N:
            raise ValueError(f"record covers {rec.setting.n_sites} sites, MPS has {N}")
    D = opts.bond_dim if opts.bond_dim is not None else mps.max_bond
    if mps.max_bond > D:
        raise ValueError(f"MPS bond dimension {mps.max_bond} exceeds target {D}")
    rng = np.random.default_rng(derive_seed(opts.seed, "stage2"))
    start = pad_mps(mps, D, rng, noise=1e-3)
    tensors = list(canonicalize(start, 0).tensors)
    tensors[0] = tensors[0] / np.linalg.norm(tensors[0])
    datas = [_RecordData(r) for r in records]
    counts = np.concatenate([d.counts for d in datas])
    history = [log_likelihood(MPS(tuple(tensors), 0), records)[0]]
    for _ in range(opts.stage2_max_iters):
        # left-to-right
        rights = [_right_partials(tensors, d) for d in datas]
        lefts = [np.ones((len(d.counts), 1), dtype=complex) for d in datas]
        val = history[-1]
        for j in range(N):
            site = _LikelihoodSite(
                tensors[j].shape, counts, np.concatenate(lefts), np.concatenate([d.proj[j] for d in datas]),
                np.concatenate([r[j] for r in rights]),
            )
            a, val = _ascend(site, tensors[j].reshape(-1), opts.local_steps)
            A = a.reshape(tensors[j].shape)
            if j < N - 1:
                tensors[j], tensors[j + 1] = left_orthonormalize(A, tensors[j + 1])
                lefts = [np.einsum("oa,oab->ob", l, _site_maps(tensors[j], d.proj[j])) for l, d in zip(lefts, datas)]
            else:
                tensors[j] = A
        # right-to-left
        lefts_all = [_left_partials(tensors, d) for d in datas]
        rights_cur = [np.ones((len(d.counts), 1), dtype=complex) for d in datas]
        for j in range(N - 1, -1, -1):
            site = _LikelihoodSite(
                tensors[j].shape, counts, np.concatenate([l[j] for l in lefts_all]),
                np.concatenate([d.proj[j] for d in datas]), np.concatenate(rights_cur),
            )
            a, val = _ascend(site, tensors[j].reshape(-1), opts.local_steps)
            A = a.reshape(tensors[j].shape)
            if j > 0:
                tensors[j], tensors[j - 1] = right_orthonormalize(A, tensors[j - 1])
                rights_cur = [
                    np.einsum("oab,ob->oa", _site_maps(tensors[j], d.proj[j]), r) for r, d in zip(rights_cur, datas)
                ]
            else:
                tensors[j] = A
        prev = history[-1]
        history.append(float(val))
        if val - prev <= 1e-10 * abs(prev):
            break
    out = MPS(tuple(tensors), 0)
    loglik, floored = log_likelihood(out, records)
    return ReconstructionReport(
        mps=out,
        final_cost=float("nan"),
        per_window_residuals=[],
        sweeps_used=len(history) - 1,
        restart_costs=[],
        bond_dim=D,
        k=0,
        stage2_loglik=loglik,
        stage2_floored=floored,
        stage2_history=[float(h) for h in history],
    )


def attach_cost(report: ReconstructionReport, estimates: Sequence[WindowEstimate]) -> ReconstructionReport:
    """Fill the reduction-cost diagnostics of ``report`` against ``estimates``."""
    k = _check_estimates(estimates, report.mps.n_sites)
    residuals = _residuals(report.mps, estimates, k)
    report.per_window_residuals = residuals
    report.final_cost = float(sum(r**2 for r in residuals))
    report.k = k
    return report


def two_stage(
    estimates: Sequence[WindowEstimate],
    records: Sequence[ShotRecord] | None,
    opts: ReconstructionOptions | None = None,
) -> tuple[ReconstructionReport, ReconstructionReport | None]:
    """Stage 1, then stage 2 from its output when enabled and records are available."""
    opts = opts or ReconstructionOptions()
    first = reconstruct_variational(estimates, opts)
    if not (opts.stage2_enabled and records):
        return first, None
    second = refine_likelihood(first.mps, records, ReconstructionOptions(**{**asdict(opts), "bond_dim": first.bond_dim}))
    return first, attach_cost(second, estimates)


def idealized_pipeline(
    spec: ChainSpec,
    t: float,
    k: int,
    bond_dim: int | None = None,
    opts: ReconstructionOptions | None = None,
    noise_p: float = 0.0,
) -> tuple[ReconstructionReport, list[WindowEstimate], StateVector]:
    """Exact evolution, exact window reductions, stage-1 fit; no sampling anywhere.

    ``noise_p`` applies single-site depolarizing noise to the reductions.
    Returns the report together with the estimates and the exact state.
    """
    opts = opts or ReconstructionOptions()
    if bond_dim is not None:
        opts = ReconstructionOptions(**{**asdict(opts), "bond_dim": bond_dim})
    state = evolve_exact(spec, neel_state(spec.n_sites), t)
    rhos = exact_local_reductions(state, k)
    if noise_p:
        rhos = [depolarize_reduction(r, noise_p) for r in rhos]
    estimates = estimates_from_matrices(rhos)
    return reconstruct_variational(estimates, opts), estimates, state
