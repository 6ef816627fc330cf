from __future__ import annotations

import numpy as np
import pytest

from mpstomo.exactsim import evolve_exact, exact_local_reductions
from mpstomo.localtomo import estimate_all_reductions, estimates_from_matrices
from mpstomo.measure import BasisSetting, ShotRecord, outcome_probabilities, run_campaign
from mpstomo.mps import (
    MPS,
    basis_mps,
    canonicalize,
    compress,
    mps_from_statevector,
    overlap,
    product_mps,
    random_mps,
    to_dense,
)
from mpstomo.reconstruct import (
    ReconstructionOptions,
    ReconstructionReport,
    _LikelihoodSite,
    _LocalProblem,
    _RecordData,
    _left_partials,
    _right_partials,
    idealized_pipeline,
    log_likelihood,
    reconstruct_variational,
    reduction_cost,
    refine_likelihood,
    two_stage,
)
from mpstomo.spinmodel import ChainSpec, neel_state

FAST = ReconstructionOptions(restarts=1, max_sweeps=40, cost_tol=1e-7)


@pytest.fixture(scope="module")
def quench6():
    spec = ChainSpec(6)
    return evolve_exact(spec, neel_state(6), 0.3 / spec.jbar())


def _fidelity(mps, state) -> float:
    return float(abs(np.vdot(to_dense(mps), state.to_full())) ** 2)


@pytest.mark.parametrize("j", [0, 2, 5])
def test_local_gradient_matches_finite_difference(j, quench6, rng):
    targets = np.stack(exact_local_reductions(quench6, 3))
    t = list(canonicalize(random_mps(6, 3, rng), j).tensors)
    prob = _LocalProblem(t, j, 3, targets)
    a = t[j].reshape(-1)
    _, g = prob.cost_grad(a)
    for _ in range(3):
        d = rng.normal(size=a.shape) + 1j * rng.normal(size=a.shape)
        fd = (prob.cost(a + 1e-6 * d) - prob.cost(a - 1e-6 * d)) / 2e-6
        assert fd == pytest.approx(2 * np.vdot(g, d).real, rel=1e-5, abs=1e-9)


def test_local_cost_equals_reduction_cost(quench6, rng):
    est = estimates_from_matrices(exact_local_reductions(quench6, 2))
    m = canonicalize(random_mps(6, 2, rng), 3)
    prob = _LocalProblem(list(m.tensors), 3, 2, np.stack([e.rho for e in est]))
    assert prob.cost(m.tensors[3].reshape(-1)) == pytest.approx(reduction_cost(m, est), rel=1e-10)


def test_reduction_cost_zero_for_exact_state(quench6):
    est = estimates_from_matrices(exact_local_reductions(quench6, 3))
    assert reduction_cost(mps_from_statevector(quench6), est) < 1e-20


def test_idealized_fit_recovers_quench_state(quench6):
    spec = ChainSpec(6)
    rep, est, state = idealized_pipeline(spec, 0.3 / spec.jbar(), 3, opts=FAST)
    assert rep.bond_dim == 4
    assert rep.final_cost < 1e-4
    assert _fidelity(rep.mps, state) > 0.99
    assert rep.cost_history == sorted(rep.cost_history, reverse=True)


def test_product_state_is_recovered_exactly():
    est = estimates_from_matrices(
        [np.diag(np.eye(2)[b]).astype(complex) for b in (0, 1, 1, 0, 1)]
    )
    rep = reconstruct_variational(est, ReconstructionOptions(restarts=2, max_sweeps=5))
    assert abs(overlap(rep.mps, basis_mps([0, 1, 1, 0, 1]))) ** 2 == pytest.approx(1.0, abs=1e-10)


def test_restarts_are_seeded_and_deterministic(quench6):
    est = estimates_from_matrices(exact_local_reductions(quench6, 2))
    opts = ReconstructionOptions(restarts=3, max_sweeps=5, seed=4)
    a = reconstruct_variational(est, opts)
    b = reconstruct_variational(est, opts)
    assert a.restart_costs == b.restart_costs
    assert len(a.restart_costs) == 3
    assert a.final_cost == pytest.approx(min(a.restart_costs), rel=1e-8)


def test_threaded_restarts_match_serial(quench6):
    est = estimates_from_matrices(exact_local_reductions(quench6, 2))
    base = dict(restarts=3, max_sweeps=4, seed=1)
    a = reconstruct_variational(est, ReconstructionOptions(**base))
    b = reconstruct_variational(est, ReconstructionOptions(**base, threads=3))
    assert a.restart_costs == b.restart_costs


def test_estimate_validation(quench6):
    est = estimates_from_matrices(exact_local_reductions(quench6, 2))
    with pytest.raises(ValueError):
        reconstruct_variational([])
    with pytest.raises(ValueError):
        reconstruct_variational(est[1:])
    bad = estimates_from_matrices(exact_local_reductions(quench6, 2))
    bad[0].rho = bad[0].rho * 2
    with pytest.raises(ValueError):
        reconstruct_variational(bad)


def test_options_validation():
    with pytest.raises(ValueError):
        ReconstructionOptions(bond_dim=0)
    with pytest.raises(ValueError):
        ReconstructionOptions(restarts=0)
    assert ReconstructionOptions().resolved_bond_dim(3) == 4


def test_report_round_trip(quench6):
    est = estimates_from_matrices(exact_local_reductions(quench6, 2))
    rep = reconstruct_variational(est, ReconstructionOptions(restarts=1, max_sweeps=2))
    back = ReconstructionReport.from_dict(rep.to_dict())
    assert back.final_cost == rep.final_cost
    assert np.allclose(to_dense(back.mps), to_dense(rep.mps))


def _dense_loglik(mps, records) -> float:
    psi = to_dense(mps)
    psi = psi / np.linalg.norm(psi)
    total = 0.0
    for rec in records:
        p = outcome_probabilities(psi, rec.setting.axes)
        n = rec.setting.n_sites
        for bits, c in rec.counts.items():
            idx = int("".join("0" if b == "1" else "1" for b in bits), 2)
            total += c * np.log(max(p[idx], 1e-12))
    return total


def test_log_likelihood_matches_dense_oracle(quench6, rng):
    recs = run_campaign(quench6, 2, 300, master_seed=8)
    m = random_mps(6, 3, rng)
    val, floored = log_likelihood(m, recs)
    assert val == pytest.approx(_dense_loglik(m, recs), rel=1e-10)
    assert floored == 0


def test_log_likelihood_counts_floored_outcomes():
    recs = [ShotRecord(BasisSetting("ZZ"), {"10": 3, "01": 2}, 5)]
    val, floored = log_likelihood(basis_mps([0, 1]), recs)
    assert floored == 1
    assert val == pytest.approx(2 * np.log(1e-12))


def test_likelihood_site_gradient(quench6, rng):
    recs = run_campaign(quench6, 2, 200, master_seed=3)
    t = list(canonicalize(random_mps(6, 2, rng), 2).tensors)
    datas = [_RecordData(r) for r in recs]
    lefts = [_left_partials(t, d)[2] for d in datas]
    rights = [_right_partials(t, d)[2] for d in datas]
    site = _LikelihoodSite(
        t[2].shape,
        np.concatenate([d.counts for d in datas]),
        np.concatenate(lefts),
        np.concatenate([d.proj[2] for d in datas]),
        np.concatenate(rights),
    )
    a = t[2].reshape(-1)
    assert site.value(a) == pytest.approx(log_likelihood(MPS(tuple(t)), recs)[0], rel=1e-10)
    _, g = site.value_grad(a)
    d = rng.normal(size=a.shape) + 1j * rng.normal(size=a.shape)
    fd = (site.value(a + 1e-6 * d) - site.value(a - 1e-6 * d)) / 2e-6
    assert fd == pytest.approx(2 * np.vdot(g, d).real, rel=1e-5)


def test_stage2_repairs_flipped_site(quench6):
    # start from the exact state with site 2 flipped; the likelihood pulls it back
    exact, _ = compress(mps_from_statevector(quench6), 4)
    t = list(exact.tensors)
    t[2] = t[2][:, ::-1, :]
    wrong = MPS(tuple(t))
    recs = run_campaign(quench6, 3, 2000, master_seed=5)
    assert _fidelity(wrong, quench6) < 0.5
    rep = refine_likelihood(wrong, recs, ReconstructionOptions(bond_dim=4, stage2_max_iters=20))
    assert rep.stage2_history[-1] >= rep.stage2_history[0]
    assert _fidelity(rep.mps, quench6) > 0.95
    assert np.isnan(rep.final_cost)


def test_stage2_self_consistent_at_high_shots(quench6):
    exact, _ = compress(mps_from_statevector(quench6), 4)
    recs = run_campaign(quench6, 3, 100_000, master_seed=6)
    rep = refine_likelihood(exact, recs, ReconstructionOptions(bond_dim=4, stage2_max_iters=10))
    assert 1 - abs(overlap(rep.mps, exact)) ** 2 < 1e-3


def test_two_stage_disabled_and_enabled(quench6):
    recs = run_campaign(quench6, 2, 500, master_seed=1)
    est = estimate_all_reductions(recs, 2)
    first, second = two_stage(est, recs, ReconstructionOptions(restarts=1, max_sweeps=10))
    assert second is None
    first, second = two_stage(
        est, recs, ReconstructionOptions(restarts=1, max_sweeps=10, stage2_enabled=True, stage2_max_iters=3)
    )
    assert second is not None and second.k == 2
    assert np.isfinite(second.final_cost)
    assert second.stage2_loglik >= log_likelihood(first.mps, recs)[0] - 1.0


def test_refine_rejects_mismatched_records():
    recs = [ShotRecord(BasisSetting("ZZZ"), {"101": 1}, 1)]
    with pytest.raises(ValueError):
        refine_likelihood(product_mps([[1, 0]] * 4), recs)
