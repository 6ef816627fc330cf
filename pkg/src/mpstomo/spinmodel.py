"""Spin chain definition: couplings, XY Hamiltonian terms and product initial states.

Units: hbar = 1, couplings and fields in rad/s, times in seconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def build_couplings(n_sites: int, alpha: float, j0: float) -> np.ndarray:
    """Power-law coupling matrix ``J_ij = j0 / |i - j|**alpha`` with zero diagonal."""
    if int(n_sites) != n_sites or n_sites < 2:
        raise ValueError(f"n_sites must be an integer >= 2, got {n_sites}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not j0 > 0:
        raise ValueError(f"j0 must be positive, got {j0}")
    idx = np.arange(int(n_sites))
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
    with np.errstate(divide="ignore"):
        J = j0 / dist**alpha
    np.fill_diagonal(J, 0.0)
    # |i-j| == |j-i| so both triangles come from identical float ops; symmetric bitwise.
    return J


def mean_nn_coupling(couplings: np.ndarray) -> float:
    """Average nearest-neighbour coupling, the unit used for dimensionless times ``t * Jbar``."""
    J = np.asarray(couplings, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] < 2:
        raise ValueError(f"couplings must be a square matrix with N >= 2, got shape {J.shape}")
    return float(np.mean(np.diag(J, k=1)))


def _validate_couplings(J: np.ndarray, n_sites: int) -> np.ndarray:
    J = np.array(J, dtype=float)
    if J.shape != (n_sites, n_sites):
        raise ValueError(f"couplings shape {J.shape} does not match n_sites={n_sites}")
    if not np.array_equal(J, J.T):
        raise ValueError("couplings must be symmetric")
    if np.any(np.diag(J) != 0):
        raise ValueError("couplings must have zero diagonal")
    return J


@dataclass(frozen=True)
class ChainSpec:
    """XY chain parameters.

    ``couplings`` (optional) overrides the power law with an explicit
    symmetric zero-diagonal matrix, e.g. calibrated experimental values.
    """

    n_sites: int
    alpha: float = 1.6
    j0: float = 1.0
    b_field: float = 0.0
    couplings: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if int(self.n_sites) != self.n_sites or self.n_sites < 2:
            raise ValueError(f"n_sites must be an integer >= 2, got {self.n_sites}")
        object.__setattr__(self, "n_sites", int(self.n_sites))
        if self.couplings is not None:
            object.__setattr__(self, "couplings", _validate_couplings(self.couplings, self.n_sites))
        elif not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def coupling_matrix(self) -> np.ndarray:
        if self.couplings is not None:
            return self.couplings.copy()
        return build_couplings(self.n_sites, self.alpha, self.j0)

    def jbar(self) -> float:
        return mean_nn_coupling(self.coupling_matrix())

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "n_sites": self.n_sites,
            "alpha": float(self.alpha),
            "j0": float(self.j0),
            "b_field": float(self.b_field),
        }
        if self.couplings is not None:
            d["couplings"] = self.couplings.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ChainSpec:
        unknown = set(d) - {"n_sites", "alpha", "j0", "b_field", "couplings"}
        if unknown:
            raise ValueError(f"unknown ChainSpec keys: {sorted(unknown)}")
        if "n_sites" not in d:
            raise ValueError("ChainSpec requires n_sites")
        couplings = d.get("couplings")
        return cls(
            n_sites=d["n_sites"],
            alpha=d.get("alpha", 1.6),
            j0=d.get("j0", 1.0),
            b_field=d.get("b_field", 0.0),
            couplings=None if couplings is None else np.asarray(couplings, dtype=float),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ChainSpec:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class HamiltonianTerms:
    """``H = sum_(i<j) J_ij (s+_i s-_j + s-_i s+_j) + sum_j B Z_j``."""

    n_sites: int
    hop_terms: list[tuple[int, int, float]]
    field_terms: list[tuple[int, float]]


def build_hamiltonian_terms(spec: ChainSpec) -> HamiltonianTerms:
    J = spec.coupling_matrix()
    n = spec.n_sites
    hops = [(i, j, float(J[i, j])) for i in range(n) for j in range(i + 1, n) if J[i, j] != 0]
    fields = [(j, float(spec.b_field)) for j in range(n)]
    return HamiltonianTerms(n_sites=n, hop_terms=hops, field_terms=fields)


@dataclass(frozen=True)
class ProductState:
    """Computational-basis product state; each entry of ``pattern`` is ``"up"`` or ``"down"``."""

    pattern: tuple[str, ...]

    def __post_init__(self) -> None:
        pattern = tuple(self.pattern)
        bad = [p for p in pattern if p not in ("up", "down")]
        if bad:
            raise ValueError(f"pattern entries must be 'up' or 'down', got {bad}")
        if not pattern:
            raise ValueError("pattern must be non-empty")
        object.__setattr__(self, "pattern", pattern)

    @property
    def n_sites(self) -> int:
        return len(self.pattern)

    def bits(self) -> tuple[int, ...]:
        """Local basis index per site (0 = up, 1 = down)."""
        return tuple(0 if p == "up" else 1 for p in self.pattern)

    def n_up(self) -> int:
        return sum(p == "up" for p in self.pattern)


def neel_state(n_sites: int) -> ProductState:
    if n_sites < 1:
        raise ValueError(f"n_sites must be >= 1, got {n_sites}")
    return ProductState(tuple("up" if j % 2 == 0 else "down" for j in range(n_sites)))
