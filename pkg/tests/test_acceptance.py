"""Acceptance criteria 1-10, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line and registers it for the
terminal summary before asserting.
"""

from __future__ import annotations

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import ACCEPTANCE_RESULTS
from mpstomo.analysis import dfe_estimate, dfe_plan, negativity, tripartite_negativity
from mpstomo.certify import (
    certificate,
    certify_estimate,
    parent_hamiltonian,
    spectral_gap,
    true_fidelity_oracle,
)
from mpstomo.cli import Run, RunConfig
from mpstomo.exactsim import (
    depolarize_reduction,
    evolve_exact,
    exact_local_reductions,
    reduced_density_matrix,
)
from mpstomo.localtomo import estimate_all_reductions, estimates_from_matrices, exact_estimates
from mpstomo.measure import NoiseModel, run_campaign
from mpstomo.mps import (
    basis_mps,
    compress,
    expectation_pauli_mps,
    half_chain_entropy,
    local_reductions_mps,
    mps_from_statevector,
    normalize,
    overlap,
    random_mps,
    schmidt_spectrum,
    to_dense,
)
from mpstomo.paulis import word_matrix
from mpstomo.reconstruct import ReconstructionOptions, idealized_pipeline, reconstruct_variational
from mpstomo.spinmodel import ChainSpec, neel_state

FAST = {"restarts": 1, "max_sweeps": 40, "cost_tol": 1e-6}
SAMPLED = ReconstructionOptions(restarts=1, max_sweeps=30, cost_tol=1e-6)


def record(num: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[num] = (bool(ok), detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------- criteria 1 and 2


@pytest.fixture(scope="module")
def idealized_n8(tmp_path_factory):
    cfg = RunConfig.from_dict(
        {
            "chain": {"n_sites": 8, "alpha": 1.6, "j0": 1.0, "b_field": 0.0},
            "times_jbar": [round(0.1 * i, 10) for i in range(16)],
            "k": 3,
            "data": False,
            "dfe_samples": 0,
            "recon": FAST,
            "outputs": str(tmp_path_factory.mktemp("ideal8")),
        }
    )
    start = time.perf_counter()
    docs = Run(cfg).certify()
    elapsed = time.perf_counter() - start
    tj = np.array([round(0.1 * i, 10) for i in range(16)])
    F = np.zeros((3, len(tj)))
    for d in docs:
        F[d["k"] - 1, d["t_index"]] = d["certificate"]["f_c"]
    return tj, F, elapsed


def test_criterion_01_idealized_n8_reproduction(idealized_n8):
    tj, F, elapsed = idealized_n8
    T = tj[-1]
    start_ok = bool(np.all(np.abs(F[:, 0] - 1) <= 1e-6))
    fifth = tj <= T / 5 + 1e-12
    drop = np.flatnonzero(fifth & (F[0] <= 1e-6))
    f1_ok = drop.size > 0 and bool(np.all(F[0, drop[0] :] <= 1e-6))
    plateau = (tj >= T / 5 - 1e-12) & (tj <= T / 3 + 1e-12)
    plateau_ok = bool(np.all(F[2, plateau] >= 0.8))
    end_ok = F[2, -1] <= 0.05
    ok = start_ok and f1_ok and plateau_ok and end_ok and elapsed < 600
    record(
        1,
        ok,
        f"F(0)={F[:, 0].round(8).tolist()} F1=0 from tJ={tj[drop[0]] if drop.size else None} "
        f"min F3 on [{T / 5:.2f},{T / 3:.2f}]={F[2, plateau].min():.3f} F3(T)={F[2, -1]:.3f} {elapsed:.0f}s",
    )
    assert ok


def test_criterion_02_monotone_in_k(idealized_n8):
    _, F, _ = idealized_n8
    worst = float(max(np.max(F[0] - F[1]), np.max(F[1] - F[2])))
    ok = worst <= 1e-6
    record(2, ok, f"max violation of F1<=F2<=F3 over 16 times: {worst:.2e}")
    assert ok


# ---------------------------------------------------------------- criterion 3


def _exact_soundness_margin() -> tuple[float, int]:
    worst, count = np.inf, 0
    for n in (4, 6, 8, 10):
        spec = ChainSpec(n)
        for p in (0.0, 0.05, 0.1):
            for tj in (0.0, 0.15, 0.3, 0.5, 1.0):
                t = tj / spec.jbar()
                _, est, _ = idealized_pipeline(spec, t, 3, opts=SAMPLED, noise_p=p)
                rep = reconstruct_variational(est, SAMPLED)
                ce = certify_estimate({"stage1": rep.mps}, est, n_boot=0)
                F = true_fidelity_oracle(ce.mps, spec, t, NoiseModel(p))
                worst = min(worst, F - ce.certificate.f_c)
                count += 1
    return worst, count


def _sampled_violations(p: float) -> int:
    spec = ChainSpec(6)
    t = 0.3 / spec.jbar()
    state = evolve_exact(spec, neel_state(6), t)
    bad = 0
    for seed in range(50):
        est = estimate_all_reductions(run_campaign(state, 3, 10_000, seed, NoiseModel(p)), 3)
        rep = reconstruct_variational(est, ReconstructionOptions(**{**SAMPLED.__dict__, "seed": seed}))
        ce = certify_estimate({"stage1": rep.mps}, est, n_boot=100, seed=seed)
        F = true_fidelity_oracle(ce.mps, spec, t, NoiseModel(p))
        bad += ce.certificate.f_c > F + 3 * ce.certificate.bootstrap_stderr
    return bad


def test_criterion_03_certificate_soundness():
    margin, count = _exact_soundness_margin()
    exact_ok = margin >= -1e-8
    viol = {p: _sampled_violations(p) for p in (0.0, 0.05)}
    sampled_ok = all(v <= 2 for v in viol.values())
    ok = exact_ok and sampled_ok
    record(
        3,
        ok,
        f"{count} exact fixtures, min(F_true - f_c)={margin:.3e}; "
        f"sampled violations/50: p=0 -> {viol[0.0]}, p=0.05 -> {viol[0.05]}",
    )
    assert ok


# ---------------------------------------------------------------- criterion 4


def test_criterion_04_depolarized_neel_closed_form():
    bits = [0, 1, 0, 1]
    mps = basis_mps(bits)
    rhos = [depolarize_reduction(np.diag(np.eye(2)[b]).astype(complex), 0.1) for b in bits]
    terms = parent_hamiltonian(mps, 1)
    cert = certificate(mps, terms, estimates_from_matrices(rhos), spectral_gap(terms, 4), n_boot=0)
    F = true_fidelity_oracle(mps, ChainSpec(4), 0.0, NoiseModel(0.1))
    ok = (
        cert.valid
        and abs(cert.f_c - 0.8) <= 1e-10
        and abs(cert.gap - 1) <= 1e-10
        and np.allclose(cert.per_window_energy, 0.05, atol=1e-10)
        and abs(F - 0.95**4) <= 1e-10
    )
    record(4, ok, f"f_c={cert.f_c:.12f} gap={cert.gap:.12f} true={F:.12f} (expect 0.8, 1, 0.81450625)")
    assert ok


# ---------------------------------------------------------------- criterion 5


def _random_case_error(rng: np.random.Generator) -> float:
    n = int(rng.integers(2, 11))
    D = int(rng.integers(1, 5))
    m = random_mps(n, D, rng)
    psi = to_dense(m)
    err = abs(np.linalg.norm(psi) - 1)
    word = "".join(rng.choice(list("IXYZ"), size=n))
    err = max(err, abs(expectation_pauli_mps(m, word) - np.vdot(psi, word_matrix(word) @ psi).real))
    other = random_mps(n, int(rng.integers(1, 4)), rng)
    err = max(err, abs(overlap(m, other) - np.vdot(psi, to_dense(other))))
    k = int(rng.integers(1, min(n, 3) + 1))
    for i, rho in enumerate(local_reductions_mps(m, k)):
        err = max(err, np.max(np.abs(rho - reduced_density_matrix(psi, range(i, i + k)))))
    cut = int(rng.integers(1, n))
    s_dense = np.linalg.svd(psi.reshape(1 << cut, -1), compute_uv=False)
    s = schmidt_spectrum(m, cut).values
    err = max(err, np.max(np.abs(s - s_dense[: len(s)])), np.sum(s_dense[len(s) :] ** 2))
    p = s_dense**2
    p = p[p > 1e-300]
    if cut == n // 2:
        err = max(err, abs(half_chain_entropy(m) + np.sum(p * np.log2(p))))
    return float(err)


def test_criterion_05_oracle_equivalence():
    rng = np.random.default_rng(20240501)
    mps_err = max(_random_case_error(rng) for _ in range(100))
    evo_err = 0.0
    for n in range(2, 9):
        spec = ChainSpec(n, alpha=1.1 + 0.1 * n, b_field=0.1 * n)
        for tj in (0.1, 0.7, 2.5):
            t = tj / spec.jbar()
            a = evolve_exact(spec, neel_state(n), t, path="sector").to_full()
            b = evolve_exact(spec, neel_state(n), t, path="full").to_full()
            evo_err = max(evo_err, float(np.max(np.abs(a - b))))
    ok = mps_err <= 1e-8 and evo_err <= 1e-8
    record(5, ok, f"100 random MPS cases max error {mps_err:.2e}; sector vs full max error {evo_err:.2e}")
    assert ok


# ---------------------------------------------------------------- criteria 6 and 8


@pytest.fixture(scope="module")
def n14_pipeline():
    spec = ChainSpec(14, alpha=1.3)
    t = 0.36 / spec.jbar()
    start = time.perf_counter()
    rep, est, state = idealized_pipeline(spec, t, 3, opts=ReconstructionOptions(**FAST))
    sources = {"stage1": rep.mps}
    for k in (1, 2):
        sub = estimates_from_matrices(exact_local_reductions(state, k))
        sources[f"stage1_k{k}"] = reconstruct_variational(sub, ReconstructionOptions(**FAST)).mps
    ce = certify_estimate(sources, est, n_boot=0)
    elapsed = time.perf_counter() - start
    return spec, t, state, ce, elapsed


def _pure(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def test_criterion_06_entanglement_values(n14_pipeline):
    bell = negativity(_pure([1, 0, 0, 1]), [0])
    ghz = tripartite_negativity(_pure([1, 0, 0, 0, 0, 0, 0, 1]))
    two = evolve_exact(ChainSpec(2, j0=1.0), neel_state(2), np.pi / 8)
    n2_quench = negativity(reduced_density_matrix(two, [0, 1]), [0])
    _, _, _, ce, _ = n14_pipeline
    n2 = [negativity(r, [0]) for r in local_reductions_mps(ce.mps, 2)]
    n3 = [tripartite_negativity(r) for r in local_reductions_mps(ce.mps, 3)]
    ok = (
        abs(bell - 0.5) <= 1e-10
        and abs(ghz - 0.5) <= 1e-10
        and abs(n2_quench - np.sqrt(2) / 4) <= 1e-6
        and min(n2) > 0
        and min(n3) > 0
    )
    record(
        6,
        ok,
        f"Bell={bell:.12f} GHZ3={ghz:.12f} N2(Jt=pi/8)={n2_quench:.8f} "
        f"N=14 min N2={min(n2):.3f} min N3={min(n3):.3f}",
    )
    assert ok


def test_criterion_08_fourteen_spin_scale(n14_pipeline):
    spec, t, _, ce, elapsed = n14_pipeline
    cert = ce.certificate
    F = true_fidelity_oracle(ce.mps, spec, t)
    ok = cert.valid and cert.f_c > 0 and elapsed < 1800 and cert.f_c <= F + 1e-8
    record(
        8,
        ok,
        f"f_c={cert.f_c:.3f} gap={cert.gap:.3f} valid={cert.valid} true fidelity={F:.3f} {elapsed:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------- criterion 7


def _chi_squared_distribution(psi: np.ndarray) -> dict[str, float]:
    n = int(np.log2(psi.size))
    out = {}
    for word in map("".join, itertools.product("IXYZ", repeat=n)):
        chi = np.vdot(psi, word_matrix(word) @ psi).real
        out[word] = chi * chi / 2**n
    return out


def test_criterion_07_dfe_correctness():
    spec = ChainSpec(6)
    t = 0.5 / spec.jbar()
    lab = evolve_exact(spec, neel_state(6), t)
    target, _ = compress(mps_from_statevector(lab), 2)
    target = normalize(target)
    true_f = float(abs(np.vdot(to_dense(target), lab.to_full())) ** 2)
    estimates, draws = [], []
    for seed in range(200):
        plan = dfe_plan(target, 250, seed=seed)
        estimates.append(dfe_estimate(plan, lab).fidelity)
        draws += plan.pauli_strings
    mean = float(np.mean(estimates))
    sem = float(np.std(estimates, ddof=1) / np.sqrt(len(estimates)))
    unbiased = abs(mean - true_f) <= 3 * sem

    dist = _chi_squared_distribution(to_dense(target))
    counts: dict[str, int] = {}
    for s in draws:
        counts[s] = counts.get(s, 0) + 1
    words = sorted((w for w, p in dist.items() if p > 1e-14), key=lambda w: -dist[w])
    total = len(draws)
    big = [w for w in words if dist[w] * total >= 5]
    rest = [w for w in words if dist[w] * total < 5]
    observed = [counts.get(w, 0) for w in big] + [sum(counts.get(w, 0) for w in rest)]
    expected = [dist[w] * total for w in big] + [sum(dist[w] for w in rest) * total]
    expected = np.array(expected) * total / np.sum(expected)
    pvalue = float(chisquare(observed, expected).pvalue)
    stray = sum(c for w, c in counts.items() if dist.get(w, 0) <= 1e-14)
    ok = unbiased and pvalue > 0.01 and stray == 0
    record(
        7,
        ok,
        f"mean={mean:.5f} true={true_f:.5f} sem={sem:.5f} ({(mean - true_f) / sem:+.2f} sigma); "
        f"chi2 p={pvalue:.3f} over {len(big) + 1} bins",
    )
    assert ok


# ---------------------------------------------------------------- criterion 9


def test_criterion_09_shot_noise_scaling():
    spec = ChainSpec(6)
    t = 0.3 / spec.jbar()
    state = evolve_exact(spec, neel_state(6), t)
    shots = np.array([100, 1000, 10_000, 100_000])
    mean_err = []
    for s in shots:
        est = estimate_all_reductions(run_campaign(state, 3, int(s), master_seed=1), 3)
        mean_err.append(np.mean([v for e in est for w, v in e.pauli_stderr.items() if w != "III"]))
    slope = float(np.polyfit(np.log(shots), np.log(mean_err), 1)[0])

    exact = exact_estimates(state, 3)
    ref = certify_estimate({"stage1": reconstruct_variational(exact, SAMPLED).mps}, exact, n_boot=0)
    f_exact = ref.certificate.f_c
    zs = []
    for seed in range(10):
        est = estimate_all_reductions(run_campaign(state, 3, 1000, seed), 3)
        rep = reconstruct_variational(est, ReconstructionOptions(**{**SAMPLED.__dict__, "seed": seed}))
        ce = certify_estimate({"stage1": rep.mps}, est, n_boot=200, seed=seed)
        zs.append((f_exact - ce.certificate.f_c) / ce.certificate.bootstrap_stderr)
    ok = abs(slope + 0.5) <= 0.1 and all(abs(z) <= 3 for z in zs)
    record(
        9,
        ok,
        f"stderr slope={slope:.3f}; exact-input f_c={f_exact:.4f}, "
        f"(exact - sampled)/sigma over 10 seeds in [{min(zs):.2f}, {max(zs):.2f}]",
    )
    assert ok


# ---------------------------------------------------------------- criterion 10


def test_criterion_10_deterministic_report(tmp_path):
    base = {
        "chain": {"n_sites": 8, "alpha": 1.6},
        "times_jbar": [0.0, 0.3, 0.5],
        "k": 3,
        "shots": 1000,
        "seed": 17,
        "recon": FAST,
        "n_boot": 50,
        "dfe_samples": 100,
    }
    blobs = []
    for name in ("a", "b"):
        cfg = RunConfig.from_dict({**base, "outputs": str(tmp_path / name)})
        Run(cfg).report()
        blobs.append((cfg.run_dir() / "report.json").read_bytes())
    report = json.loads(blobs[0])
    ok = blobs[0] == blobs[1] and report["fidelity_bounds"]["data"]["k3"][0]["f_c"] > 0.9
    record(10, ok, f"report.json {len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}")
    assert ok
