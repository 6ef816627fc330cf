"""Simulated local-measurement campaigns.

A campaign measures every site in a Pauli eigenbasis chosen by a periodic
schedule, so that every window of ``k`` neighbouring sites sees all ``3^k``
axis combinations. Outcomes are stored as bitstrings where ``'1'`` marks the
+1 eigenvalue of the site's axis.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from mpstomo.errors import DataFormatError
from mpstomo.exactsim import StateVector
from mpstomo.paulis import EIGENBASIS

SHOTS_FORMAT = "shots-v1"
DEFAULT_SHOTS = 1000


def derive_seed(master: int, *labels) -> int:
    """Stable 63-bit seed from a master seed and a label path (sha256 hash chain)."""
    h = hashlib.sha256(str(int(master)).encode())
    for label in labels:
        h = hashlib.sha256(h.digest() + str(label).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1


@dataclass(frozen=True)
class BasisSetting:
    axes: str

    def __post_init__(self) -> None:
        axes = str(self.axes).upper()
        if not axes or set(axes) - set("XYZ"):
            raise ValueError(f"setting axes must be a non-empty string over XYZ, got {self.axes!r}")
        object.__setattr__(self, "axes", axes)

    @property
    def n_sites(self) -> int:
        return len(self.axes)


@dataclass(frozen=True)
class NoiseModel:
    p_local: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.p_local <= 1:
            raise ValueError(f"p_local must lie in [0, 1], got {self.p_local}")


@dataclass
class ShotRecord:
    setting: BasisSetting
    counts: dict[str, int]
    shots: int
    seed: int = 0
    noise_p: float = 0.0
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        n = self.setting.n_sites
        total = 0
        for bits, c in self.counts.items():
            if len(bits) != n or set(bits) - {"0", "1"}:
                raise DataFormatError(f"bad outcome string {bits!r} for {n} sites")
            if int(c) != c or c < 0:
                raise DataFormatError(f"count for {bits!r} must be a non-negative integer")
            total += int(c)
        if total != self.shots:
            raise DataFormatError(f"counts sum to {total}, record declares {self.shots} shots")

    def to_dict(self) -> dict:
        d = {
            "format": SHOTS_FORMAT,
            "setting": self.setting.axes,
            "shots": int(self.shots),
            "seed": int(self.seed),
            "noise_p": float(self.noise_p),
            "counts": {k: int(v) for k, v in sorted(self.counts.items())},
        }
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ShotRecord:
        if d.get("format") != SHOTS_FORMAT:
            raise DataFormatError(f"expected format {SHOTS_FORMAT!r}, got {d.get('format')!r}")
        rec = cls(
            setting=BasisSetting(d["setting"]),
            counts={str(k): int(v) for k, v in d["counts"].items()},
            shots=int(d["shots"]),
            seed=int(d.get("seed", 0)),
            noise_p=float(d.get("noise_p", 0.0)),
            meta=dict(d.get("meta", {})),
        )
        rec.validate()
        return rec


def schedule_settings(n_sites: int, k: int) -> list[BasisSetting]:
    """``3^k`` global settings: each axis word of length ``k`` repeated periodically along the chain."""
    if not 1 <= k <= n_sites:
        raise ValueError(f"need 1 <= k <= n_sites, got k={k}, n_sites={n_sites}")
    return [
        BasisSetting("".join(word[j % k] for j in range(n_sites)))
        for word in itertools.product("XYZ", repeat=k)
    ]


def outcome_probabilities(psi: np.ndarray, axes: str) -> np.ndarray:
    """Born probabilities over ``2^N`` outcomes; index bit 0 means the +1 eigenvalue."""
    n = len(axes)
    T = np.asarray(psi, dtype=complex).reshape([2] * n)
    for j, a in enumerate(axes):
        if a != "Z":
            T = np.moveaxis(np.tensordot(EIGENBASIS[a].conj().T, T, axes=(1, j)), 0, j)
    p = np.abs(T.reshape(-1)) ** 2
    return p / p.sum()


def flip_channel(p: np.ndarray, n: int, p_local: float) -> np.ndarray:
    """Flip each site's outcome independently with probability ``p_local / 2``.

    Equivalent to single-site depolarizing noise followed by any Pauli-basis measurement.
    """
    if p_local == 0:
        return p
    q = p_local / 2
    T = p.reshape([2] * n)
    for j in range(n):
        T = (1 - q) * T + q * np.flip(T, axis=j)
    return T.reshape(-1)


def _index_to_bits(idx: np.ndarray, n: int) -> list[str]:
    # outcome index bit 0 = +1 eigenvalue, recorded as '1'
    return [format(int(i) ^ ((1 << n) - 1), f"0{n}b") for i in idx]


def sample_shots(
    state: StateVector | np.ndarray,
    setting: BasisSetting,
    shots: int = DEFAULT_SHOTS,
    seed: int = 0,
    noise: NoiseModel | None = None,
) -> ShotRecord:
    """Draw ``shots`` i.i.d. outcomes of ``setting`` from ``state`` (deterministic per seed)."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    noise = noise or NoiseModel()
    psi = state.to_full() if isinstance(state, StateVector) else np.asarray(state)
    n = setting.n_sites
    if psi.size != 1 << n:
        raise ValueError(f"setting has {n} sites but the state has {psi.size} amplitudes")
    p = flip_channel(outcome_probabilities(psi, setting.axes), n, noise.p_local)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(shots, p / p.sum())
    nz = np.flatnonzero(counts)
    return ShotRecord(
        setting=setting,
        counts=dict(zip(_index_to_bits(nz, n), (int(c) for c in counts[nz]))),
        shots=int(shots),
        seed=int(seed),
        noise_p=float(noise.p_local),
    )


def run_campaign(
    state: StateVector,
    k: int,
    shots: int = DEFAULT_SHOTS,
    master_seed: int = 0,
    noise: NoiseModel | None = None,
    labels: tuple = (),
) -> list[ShotRecord]:
    """Sample every scheduled setting; setting ``i`` uses seed ``derive_seed(master, *labels, i)``."""
    return [
        sample_shots(state, s, shots, derive_seed(master_seed, *labels, i), noise)
        for i, s in enumerate(schedule_settings(state.n_sites, k))
    ]


def persist_records(records: Iterable[ShotRecord], path: str | Path) -> None:
    """Append records to a JSONL file, one record per line."""
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            rec.validate()
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def ingest_records(path: str | Path) -> list[ShotRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(ShotRecord.from_dict(json.loads(line)))
            except DataFormatError as exc:
                raise DataFormatError(f"line {lineno}: {exc}", line=lineno) from exc
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"line {lineno}: malformed record ({exc})", line=lineno) from exc
    return out
