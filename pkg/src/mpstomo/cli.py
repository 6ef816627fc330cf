"""Command-line pipeline: simulate, measure, reconstruct, certify, analyze, report.

Every run lives in ``<out>/run-<hash>/`` where ``<hash>`` is derived from the
resolved configuration. Stages reuse artifacts that already exist in the run
directory (after checking their format and config hash) and never rewrite
them, so reruns are cheap and byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from mpstomo import __version__
from mpstomo.analysis import (
    correlation_matrix,
    dfe_estimate,
    dfe_plan,
    light_cone_overlay,
    light_cone_velocity,
    magnetization_profile,
    negativity,
    tripartite_negativity,
    write_correlation_csv,
    write_csv,
    write_magnetization_csv,
    write_negativity_csv,
)
from mpstomo.certify import CertifiedEstimate, certify_estimate, true_fidelity_oracle
from mpstomo.errors import DataFormatError, MpsTomoError, SizeLimitError
from mpstomo.exactsim import MAX_SITES, StateVector, evolve_exact, exact_local_reductions, noisy_density_matrix
from mpstomo.localtomo import (
    WindowEstimate,
    estimate_all_reductions,
    estimates_from_matrices,
    linear_inversion,
    narrow_estimates,
    project_to_physical,
)
from mpstomo.measure import NoiseModel, ShotRecord, derive_seed, ingest_records, persist_records, run_campaign
from mpstomo.mps import MPS, half_chain_entropy, mps_from_statevector
from mpstomo.paulis import all_words
from mpstomo.reconstruct import ReconstructionOptions, ReconstructionReport, two_stage
from mpstomo.spinmodel import ChainSpec, neel_state

log = logging.getLogger("mpstomo")

REPORT_FORMAT = "report-v1"
EXIT_OK, EXIT_CONFIG, EXIT_SIZE, EXIT_DATA = 0, 2, 3, 4
NEGATIVITY_BOOT = 50


class ConfigError(ValueError):
    """Invalid run configuration."""


# ---------------------------------------------------------------- configuration


@dataclass
class RunConfig:
    chain: ChainSpec
    times: list[float]
    k: int = 3
    shots: int = 1000
    seed: int = 0
    noise_p: float = 0.0
    recon: ReconstructionOptions = field(default_factory=ReconstructionOptions)
    outputs: str = "runs"
    n_boot: int = 200
    support_tol: float = 1e-7
    idealized: bool = True
    data: bool = True
    dfe_samples: int = 250
    threads: int = 1

    def __post_init__(self) -> None:
        if not self.times:
            raise ConfigError("times must be a non-empty list")
        if any(t < 0 for t in self.times) or list(self.times) != sorted(self.times):
            raise ConfigError("times must be non-negative and sorted ascending")
        if not 1 <= self.k <= min(self.chain.n_sites, 8):
            raise ConfigError(f"k={self.k} outside [1, {min(self.chain.n_sites, 8)}]")
        if self.shots < 1 or self.n_boot < 0 or self.dfe_samples < 0 or self.threads < 1:
            raise ConfigError("shots and threads must be >= 1; n_boot and dfe_samples >= 0")
        if not 0 <= self.noise_p <= 1:
            raise ConfigError("noise_p must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)} | {"times_jbar"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "chain" not in d:
            raise ConfigError("config requires a 'chain' block")
        try:
            chain = ChainSpec.from_dict(d["chain"])
            recon = ReconstructionOptions(**d.get("recon", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if ("times" in d) == ("times_jbar" in d):
            raise ConfigError("give exactly one of 'times' or 'times_jbar'")
        if "times" in d:
            times = [float(t) for t in d["times"]]
        else:
            jbar = chain.jbar()
            times = [float(x) / jbar for x in d["times_jbar"]]
        rest = {k: v for k, v in d.items() if k not in ("chain", "recon", "times", "times_jbar")}
        try:
            return cls(chain=chain, times=times, recon=recon, **rest)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["chain"] = self.chain.to_dict()
        d["recon"] = asdict(self.recon)
        d["times"] = [float(t) for t in self.times]
        return d

    def hash(self) -> str:
        """Content hash of everything that affects results (not output location or thread count)."""
        d = self.to_dict()
        d.pop("outputs")
        d.pop("threads")
        d["recon"].pop("threads", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def run_dir(self) -> Path:
        return Path(self.outputs) / f"run-{self.hash()}"


def _read_config_dict(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return d


def load_config(path: str | Path) -> RunConfig:
    return RunConfig.from_dict(_read_config_dict(path))


# ---------------------------------------------------------------- artifact I/O


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


class Run:
    """One content-addressed run directory and the stage implementations over it."""

    def __init__(self, cfg: RunConfig) -> None:
        self.cfg = cfg
        self.hash = cfg.hash()
        self.root = cfg.run_dir()
        self.root.mkdir(parents=True, exist_ok=True)
        cfg_file = self.root / "config.json"
        if not cfg_file.exists():
            cfg_file.write_text(_dump({"config_hash": self.hash, "config": self._echo()}), encoding="utf-8")
        self._states: dict[int, StateVector] = {}

    def _echo(self) -> dict:
        d = self.cfg.to_dict()
        d.pop("outputs")
        d.pop("threads")
        d["recon"].pop("threads", None)
        return d

    # artifacts ------------------------------------------------------

    def write(self, rel: str, fmt: str, payload: dict) -> dict:
        """Write ``payload`` tagged with format and config hash unless the file already exists."""
        path = self.root / rel
        if path.exists():
            return self.read(rel, fmt)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {"format": fmt, "config_hash": self.hash, **payload}
        tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}")
        tmp.write_text(_dump(doc), encoding="utf-8")
        os.replace(tmp, path)
        return doc

    def read(self, rel: str, fmt: str) -> dict:
        path = self.root / rel
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: not valid JSON ({exc})") from exc
        if doc.get("format") != fmt:
            raise DataFormatError(f"{path}: expected format {fmt!r}, found {doc.get('format')!r}")
        if doc.get("config_hash") != self.hash:
            raise DataFormatError(f"{path}: artifact belongs to config {doc.get('config_hash')!r}, not {self.hash!r}")
        return doc

    def exists(self, rel: str) -> bool:
        return (self.root / rel).exists()

    # helpers --------------------------------------------------------

    @property
    def n(self) -> int:
        return self.cfg.chain.n_sites

    def tj(self, ti: int) -> float:
        return float(self.cfg.times[ti] * self.cfg.chain.jbar())

    def state(self, ti: int) -> StateVector:
        if ti not in self._states:
            self._states[ti] = evolve_exact(self.cfg.chain, neel_state(self.n), self.cfg.times[ti])
        return self._states[ti]

    def recon_opts(self, ti: int, k: int) -> ReconstructionOptions:
        return ReconstructionOptions(**{**asdict(self.cfg.recon), "seed": derive_seed(self.cfg.seed, "recon", self.cfg.recon.seed, ti, k)})

    def cells(self) -> list[tuple[int, int]]:
        return [(ti, k) for ti in range(len(self.cfg.times)) for k in range(1, self.cfg.k + 1)]

    def map(self, fn: Callable, items: Sequence) -> list:
        if self.cfg.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.cfg.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    # stages ---------------------------------------------------------

    def simulate(self) -> list[dict]:
        if self.n > MAX_SITES:
            raise SizeLimitError(
                f"N={self.n} exceeds the exact-simulation limit of {MAX_SITES} sites; reduce n_sites"
            )
        out = []
        for ti, t in enumerate(self.cfg.times):
            rel = f"states/t{ti:03d}.json"
            if self.exists(rel):
                out.append(self.read(rel, "state-v1"))
                continue
            st = self.state(ti)
            payload = {
                "t_index": ti,
                "t": float(t),
                "t_jbar": self.tj(ti),
                "n_sites": self.n,
                "basis": st.basis,
                "norm": st.norm(),
                "magnetization": magnetization_profile(st).tolist(),
                "half_chain_entropy": half_chain_entropy(mps_from_statevector(st.to_full(), tol=1e-14)),
            }
            if self.n <= 10:
                v = st.to_full()
                payload["amplitudes"] = np.column_stack([v.real, v.imag]).ravel().tolist()
            out.append(self.write(rel, "state-v1", payload))
        return out

    def campaign(self, ti: int) -> list[ShotRecord]:
        """Shot records of time ``ti``: one JSONL file per setting."""
        d = self.root / f"campaign/t{ti:03d}"
        index = f"campaign/t{ti:03d}/index.json"
        if self.exists(index):
            doc = self.read(index, "campaign-v1")
            recs = []
            for name in doc["files"]:
                recs.extend(ingest_records(d / name))
            return recs
        noise = NoiseModel(self.cfg.noise_p)
        recs = run_campaign(self.state(ti), self.cfg.k, self.cfg.shots, self.cfg.seed, noise, ("campaign", ti))
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for si, rec in enumerate(recs):
            rec.meta = {"config_hash": self.hash, "t_index": ti, "setting_index": si}
            name = f"s{si:02d}_{rec.setting.axes}.jsonl"
            path = d / name
            if not path.exists():
                persist_records([rec], path)
            names.append(name)
        self.write(index, "campaign-v1", {"t_index": ti, "files": names, "shots": self.cfg.shots})
        return recs

    def tomo(self, ti: int, k: int) -> list[WindowEstimate]:
        rel = f"tomo/t{ti:03d}_k{k}.json"
        if self.exists(rel):
            return [WindowEstimate.from_dict(e) for e in self.read(rel, "tomo-v1")["estimates"]]
        est = estimate_all_reductions(self.campaign(ti), k)
        self.write(rel, "tomo-v1", {"t_index": ti, "k": k, "estimates": [e.to_dict() for e in est]})
        return est

    def reconstruct(self, ti: int, k: int) -> dict[str, MPS]:
        """Stage-1 (and optionally stage-2) data-path reconstructions of one cell."""
        rel1, rel2 = f"recon/t{ti:03d}_k{k}.json", f"recon/t{ti:03d}_k{k}_stage2.json"
        if self.exists(rel1):
            out = {"stage1": ReconstructionReport.from_dict(self.read(rel1, "recon-v1")).mps}
            if self.exists(rel2):
                out["stage2"] = ReconstructionReport.from_dict(self.read(rel2, "recon-v1")).mps
            return out
        est = self.tomo(ti, k)
        records = self.campaign(ti) if self.cfg.recon.stage2_enabled else None
        first, second = two_stage(est, records, self.recon_opts(ti, k))
        out = {"stage1": first.mps}
        if second is not None:
            self.write(rel2, "recon-v1", _strip_format(second.to_dict()))
            out["stage2"] = second.mps
        self.write(rel1, "recon-v1", _strip_format(first.to_dict()))
        return out

    def ideal_recon(self, ti: int, k: int) -> MPS:
        """Stage-1 fit to the exact window reductions of one cell."""
        rel = f"recon/ideal_t{ti:03d}_k{k}.json"
        if self.exists(rel):
            return ReconstructionReport.from_dict(self.read(rel, "recon-v1")).mps
        est = estimates_from_matrices(exact_local_reductions(self.state(ti), k))
        first, _ = two_stage(est, None, self.recon_opts(ti, k))
        self.write(rel, "recon-v1", _strip_format(first.to_dict()))
        return first.mps

    def _cert_payload(self, ti: int, k: int, ce: CertifiedEstimate, path: str) -> dict:
        cert = ce.certificate.to_dict()
        cert.pop("format")
        cert.pop("config")
        payload = {
            "t_index": ti,
            "k": k,
            "path": path,
            "certificate": cert,
            "source": ce.source,
            "profile": ce.profile,
            "width": ce.width,
            "certified_mps": ce.mps.to_dict(),
            "candidates": ce.candidates,
        }
        noise = NoiseModel(self.cfg.noise_p if path == "data" else 0.0)
        if noise.p_local == 0 or self.n <= 10:
            payload["true_fidelity"] = true_fidelity_oracle(ce.mps, self.cfg.chain, self.cfg.times[ti], noise)
        return payload

    def certify_cell(self, cell: tuple[str, int, int]) -> dict:
        path, ti, k = cell
        rel = f"cert/{path}_t{ti:03d}_k{k}.json"
        if self.exists(rel):
            return self.read(rel, "certcell-v1")
        try:
            # fits for every narrower width join the pool, so bounds never decrease with k
            sources: dict[str, MPS] = {}
            if path == "data":
                for kk in range(1, k + 1):
                    for name, m in self.reconstruct(ti, kk).items():
                        sources[f"{name}_k{kk}"] = m
                est = self.tomo(ti, k)
                n_boot = self.cfg.n_boot
            else:
                for kk in range(1, k + 1):
                    sources[f"stage1_k{kk}"] = self.ideal_recon(ti, kk)
                est = estimates_from_matrices(exact_local_reductions(self.state(ti), k))
                n_boot = 0
            ce = certify_estimate(
                sources, est, n_boot, derive_seed(self.cfg.seed, "bootstrap", path, ti, k), self.cfg.support_tol
            )
            payload = self._cert_payload(ti, k, ce, path)
        except (MpsTomoError, ValueError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, SizeLimitError):
                raise
            payload = {"t_index": ti, "k": k, "path": path, "error": f"{type(exc).__name__}: {exc}"}
        return self.write(rel, "certcell-v1", payload)

    def certify(self) -> list[dict]:
        paths = [p for p, on in (("ideal", self.cfg.idealized), ("data", self.cfg.data)) if on]
        jobs = [(p, ti, k) for p in paths for ti, k in self.cells()]
        return self.map(self.certify_cell, jobs)

    def certified_mps(self, path: str, ti: int, k: int) -> MPS | None:
        doc = self.certify_cell((path, ti, k))
        return MPS.from_dict(doc["certified_mps"]) if "certified_mps" in doc else None

    def _negativity_rows(self, est: Sequence[WindowEstimate], ti: int, label: str) -> list[list]:
        """N2 of neighbouring pairs and N3 of neighbouring triples with bootstrap errors."""
        rows = []
        for width in (2, 3):
            if est[0].k < width:
                continue
            for e in narrow_estimates(est, width):
                val = _window_negativity(e.rho)
                sd = _negativity_stderr(e, derive_seed(self.cfg.seed, "negativity", label, ti, e.start, width))
                rows.append([f"{label}:t{ti:03d}:N{width}:{e.start}-{e.start + width - 1}", val, sd])
        return rows

    def analyze(self) -> list[str]:
        written = []
        adir = self.root / "analysis"
        adir.mkdir(parents=True, exist_ok=True)

        def emit(name: str, writer: Callable[[Path], None]) -> None:
            path = adir / name
            if not path.exists():
                writer(path)
            written.append(f"analysis/{name}")

        kmax = self.cfg.k
        mag = {"exact": [], "data": [], "certified": []}
        neg_rows: list[list] = []
        for ti, t in enumerate(self.cfg.times):
            st = self.state(ti)
            mag["exact"] += [(i, float(t), float(p)) for i, p in enumerate(magnetization_profile(st))]
            ex = estimates_from_matrices(exact_local_reductions(st, min(3, self.n)))
            neg_rows += self._negativity_rows(ex, ti, "exact")
            emit(f"corr_zz_t{ti:03d}_exact.csv", lambda p, st=st: write_correlation_csv(p, correlation_matrix(st, "Z", "Z")))
            if self.cfg.data:
                recs = self.campaign(ti)
                try:
                    mag["data"] += [(i, float(t), float(p)) for i, p in enumerate(magnetization_profile(recs))]
                except MpsTomoError:
                    pass
                emit(
                    f"corr_zz_t{ti:03d}_data.csv",
                    lambda p, r=recs: write_correlation_csv(p, correlation_matrix(r, "Z", "Z")),
                )
                neg_rows += self._negativity_rows(self.tomo(ti, kmax), ti, "data")
                cm = self.certified_mps("data", ti, kmax)
                if cm is not None:
                    mag["certified"] += [(i, float(t), float(p)) for i, p in enumerate(magnetization_profile(cm))]
                    emit(
                        f"corr_zz_t{ti:03d}_certified.csv",
                        lambda p, m=cm: write_correlation_csv(p, correlation_matrix(m, "Z", "Z")),
                    )
        for name, rows in mag.items():
            if rows:
                emit(f"magnetization_{name}.csv", lambda p, rows=rows: write_magnetization_csv(p, rows))
        emit("negativity.csv", lambda p: write_negativity_csv(p, neg_rows))
        J = self.cfg.chain.coupling_matrix()
        tjs = [self.tj(ti) for ti in range(len(self.cfg.times))]
        emit(
            "light_cone.csv",
            lambda p: write_csv(p, ["t_jbar", "site_offset"], light_cone_overlay(J, self.cfg.chain.jbar(), tjs)),
        )
        return written

    def dfe(self) -> list[dict]:
        """DFE of the top-width data-path certified estimate against the exact lab state."""
        out = []
        if self.cfg.dfe_samples == 0 or not self.cfg.data:
            return out
        for ti in range(len(self.cfg.times)):
            rel = f"dfe/t{ti:03d}.json"
            if self.exists(rel):
                out.append(self.read(rel, "dfe-v1"))
                continue
            m = self.certified_mps("data", ti, self.cfg.k)
            if m is None:
                continue
            plan = dfe_plan(m, self.cfg.dfe_samples, derive_seed(self.cfg.seed, "dfe", ti))
            st = self.state(ti)
            if self.cfg.noise_p > 0 and self.n <= 10:
                lab = noisy_density_matrix(st, self.cfg.noise_p)
            else:
                lab = st
            res = dfe_estimate(plan, lab)
            payload = {"t_index": ti, "result": _strip_format(res.to_dict()), "plan": _strip_format(plan.to_dict())}
            out.append(self.write(rel, "dfe-v1", payload))
        return out

    def report(self) -> dict:
        rel = "report.json"
        if self.exists(rel):
            return self.read(rel, REPORT_FORMAT)
        states = self.simulate()
        certs = self.certify()
        self.analyze()
        dfe = self.dfe()
        ntimes = len(self.cfg.times)
        curves: dict[str, dict[str, list]] = {}
        for doc in certs:
            path = doc["path"]
            key = f"k{doc['k']}"
            c = curves.setdefault(path, {})
            row = c.setdefault(key, [None] * ntimes)
            if "certificate" in doc:
                row[doc["t_index"]] = {
                    "f_c": doc["certificate"]["f_c"],
                    "stderr": doc["certificate"]["bootstrap_stderr"],
                    "valid": doc["certificate"]["valid"],
                    "true_fidelity": doc.get("true_fidelity"),
                    "width": doc["width"],
                    "profile": doc["profile"],
                    "source": doc["source"],
                }
            else:
                row[doc["t_index"]] = {"error": doc["error"]}
        entropies = {"exact": [s["half_chain_entropy"] for s in states]}
        for path in curves:
            vals = []
            for ti in range(ntimes):
                m = self.certified_mps(path, ti, self.cfg.k)
                vals.append(None if m is None else half_chain_entropy(m))
            entropies[f"certified_{path}"] = vals
        neg_path = self.root / "analysis" / "negativity.csv"
        negs = [line.split(",") for line in neg_path.read_text(encoding="utf-8").splitlines()[1:]]
        J = self.cfg.chain.coupling_matrix()
        payload = {
            "version": __version__,
            "config": self._echo(),
            "times": [float(t) for t in self.cfg.times],
            "t_jbar": [self.tj(ti) for ti in range(ntimes)],
            "fidelity_bounds": curves,
            "entropies": entropies,
            "negativity": [{"window": w, "value": float(v), "stderr": float(s)} for w, v, s in negs],
            "light_cone": {"velocity": light_cone_velocity(J), "jbar": self.cfg.chain.jbar()},
            "dfe": [{"t_index": d["t_index"], **d["result"]} for d in dfe],
        }
        return self.write(rel, REPORT_FORMAT, payload)


def _strip_format(d: dict) -> dict:
    return {k: v for k, v in d.items() if k != "format"}


def _window_negativity(rho: np.ndarray) -> float:
    if rho.shape[0] == 4:
        return negativity(rho, [0])
    return tripartite_negativity(rho)


def _negativity_stderr(est: WindowEstimate, seed: int) -> float:
    words = all_words(est.k)[1:]
    sd = np.array([est.pauli_stderr.get(w, 0.0) for w in words])
    if not sd.any():
        return 0.0
    mean = np.array([est.pauli_means[w] for w in words])
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(NEGATIVITY_BOOT):
        draw = np.clip(mean + sd * rng.standard_normal(len(words)), -1, 1)
        vals.append(_window_negativity(project_to_physical(linear_inversion(dict(zip(words, draw)), est.k))))
    return float(np.std(vals, ddof=1))


# ---------------------------------------------------------------- entry point


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (JSON)")
    common.add_argument("--out", help="output root (overrides config 'outputs')")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, help="worker threads for per-cell work")
    common.add_argument("-v", "--verbose", action="store_true")
    recon = argparse.ArgumentParser(add_help=False)
    recon.add_argument("--bond-dim", type=int, help="stage-1 bond dimension")
    recon.add_argument("--restarts", type=int)
    recon.add_argument("--sweeps", type=int, help="maximum sweeps per restart")
    recon.add_argument("--stage2", action="store_true", help="enable likelihood refinement")

    p = argparse.ArgumentParser(prog="mpstomo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mpstomo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="exact quench states per time")
    sub.add_parser("campaign", parents=[common], help="sampled shot records per time")
    sub.add_parser("tomo", parents=[common], help="window estimates for every k")
    for name, text in (
        ("reconstruct", "MPS fits from window estimates"),
        ("certify", "certified fidelity bounds (data and idealized paths)"),
        ("analyze", "CSV analyses"),
        ("dfe", "direct fidelity estimation of the certified estimates"),
        ("report", "end-to-end run and JSON summary"),
    ):
        sub.add_parser(name, parents=[common, recon], help=text)
    return p


def _apply_overrides(cfg_dict: dict, args: argparse.Namespace) -> dict:
    d = dict(cfg_dict)
    if args.out is not None:
        d["outputs"] = args.out
    if args.seed is not None:
        d["seed"] = args.seed
    if args.threads is not None:
        d["threads"] = args.threads
    recon = dict(d.get("recon", {}))
    for attr, key in (("bond_dim", "bond_dim"), ("restarts", "restarts"), ("sweeps", "max_sweeps")):
        val = getattr(args, attr, None)
        if val is not None:
            recon[key] = val
    if getattr(args, "stage2", False):
        recon["stage2_enabled"] = True
    if recon:
        d["recon"] = recon
    return d


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_dict(_apply_overrides(_read_config_dict(args.config), args))
        run = Run(cfg)
        cmd = args.command
        if cmd == "simulate":
            run.simulate()
        elif cmd == "campaign":
            run.simulate()
            for ti in range(len(cfg.times)):
                run.campaign(ti)
        elif cmd == "tomo":
            for ti, k in run.cells():
                run.tomo(ti, k)
        elif cmd == "reconstruct":
            run.map(lambda c: run.reconstruct(*c), run.cells())
        elif cmd == "certify":
            run.certify()
        elif cmd == "analyze":
            run.analyze()
        elif cmd == "dfe":
            run.dfe()
        elif cmd == "report":
            run.report()
        print(run.root)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SizeLimitError as exc:
        print(f"size limit: {exc} (reduce n_sites; the sector path reaches N={MAX_SITES})", file=sys.stderr)
        return EXIT_SIZE
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
