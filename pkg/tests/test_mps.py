from __future__ import annotations

import numpy as np
import pytest

from mpstomo.errors import DataFormatError, SizeLimitError
from mpstomo.exactsim import evolve_exact, reduced_density_matrix
from mpstomo.mps import (
    MPS,
    basis_mps,
    canonicalize,
    capped_bond_dims,
    compress,
    entropy_bits,
    expectation_local_mps,
    expectation_pauli_mps,
    half_chain_entropy,
    isometry_error,
    local_reductions_mps,
    mps_from_statevector,
    normalize,
    overlap,
    pad_mps,
    product_mps,
    random_mps,
    schmidt_spectrum,
    to_dense,
)
from mpstomo.paulis import word_matrix
from mpstomo.spinmodel import ChainSpec, neel_state


def _dense_entropy(psi: np.ndarray, cut: int, n: int) -> float:
    s = np.linalg.svd(psi.reshape(1 << cut, 1 << (n - cut)), compute_uv=False)
    p = s**2 / np.sum(s**2)
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log2(p)))


def test_constructor_validates_shapes():
    with pytest.raises(ValueError):
        MPS((np.zeros((1, 3, 1)),))
    with pytest.raises(ValueError):
        MPS((np.zeros((2, 2, 1)),))
    with pytest.raises(ValueError):
        MPS((np.zeros((1, 2, 2)), np.zeros((3, 2, 1))))


def test_basis_mps_dense_and_bond_dims():
    m = basis_mps([0, 1, 1])
    v = to_dense(m)
    assert v[0b011] == 1 and np.count_nonzero(v) == 1
    assert m.bond_dims == [1, 1]


def test_capped_bond_dims():
    assert capped_bond_dims(6, 8) == [2, 4, 8, 4, 2]
    assert capped_bond_dims(4, [1, 3, 5]) == [1, 3, 2]
    with pytest.raises(ValueError):
        capped_bond_dims(4, [1, 2])


def test_canonicalize_isometries_and_state(rng):
    m = random_mps(7, 4, rng)
    v = to_dense(m)
    for c in (0, 3, 6):
        cm = canonicalize(m, c)
        assert isometry_error(cm) < 1e-12
        assert np.allclose(to_dense(cm), v, atol=1e-12)


def test_normalize_and_overlap(rng):
    m = random_mps(5, 3, rng)
    scaled = MPS(tuple([m.tensors[0] * 3.0] + list(m.tensors[1:])))
    n = normalize(scaled)
    assert overlap(n, n).real == pytest.approx(1.0)
    b = random_mps(5, 2, rng)
    assert overlap(m, b) == pytest.approx(np.vdot(to_dense(m), to_dense(b)), abs=1e-12)


def test_from_statevector_round_trip():
    st = evolve_exact(ChainSpec(8), neel_state(8), 0.9)
    psi = st.to_full()
    m = mps_from_statevector(st)
    assert np.allclose(to_dense(m), psi, atol=1e-12)
    assert m.max_bond <= 16


def test_from_statevector_tolerance_bounds_infidelity():
    st = evolve_exact(ChainSpec(8), neel_state(8), 1.5)
    psi = st.to_full()
    m = mps_from_statevector(st, tol=1e-3)
    assert 1 - abs(np.vdot(to_dense(m), psi)) ** 2 <= 1e-3 + 1e-12


def test_compress_respects_bond_dims_and_reports_discarded(rng):
    m = random_mps(8, 6, rng)
    c, disc = compress(m, 2)
    assert c.max_bond <= 2
    assert 0 < disc < 8
    assert overlap(c, c).real == pytest.approx(1.0)
    same, zero = compress(m, 64)
    assert zero < 1e-20
    assert abs(overlap(same, normalize(m))) == pytest.approx(1.0, abs=1e-12)


def test_compress_profile(rng):
    m = random_mps(6, 4, rng)
    c, _ = compress(m, [2, 1, 2, 1, 2])
    assert c.bond_dims == [2, 1, 2, 1, 2]


def test_pad_mps_preserves_state(rng):
    m = random_mps(6, 2, rng)
    p = pad_mps(m, 4)
    assert p.max_bond == 4
    assert np.allclose(to_dense(p), to_dense(normalize(m)))


def test_reductions_match_dense(rng):
    for _ in range(5):
        m = random_mps(7, 3, rng)
        psi = to_dense(m)
        for k in (1, 2, 3):
            for i, rho in enumerate(local_reductions_mps(m, k)):
                assert np.allclose(rho, reduced_density_matrix(psi, range(i, i + k)), atol=1e-10)


def test_pauli_and_local_expectations_match_dense(rng):
    m = random_mps(6, 4, rng)
    psi = to_dense(normalize(m))
    for word in ("ZIIIII", "XYZIXY", "IIYYII", "ZZZZZZ"):
        ref = np.vdot(psi, word_matrix(word) @ psi).real
        assert expectation_pauli_mps(m, word) == pytest.approx(ref, abs=1e-10)
    op = np.array([[0.3, 1j], [-1j, 2.0]])
    full = np.kron(np.kron(np.eye(4), op), np.eye(8))
    assert expectation_local_mps(m, {2: op}) == pytest.approx(np.vdot(psi, full @ psi), abs=1e-10)


def test_schmidt_and_entropy(rng):
    m = random_mps(8, 4, rng)
    psi = to_dense(normalize(m))
    for cut in (1, 4, 7):
        s = schmidt_spectrum(m, cut).values
        assert np.sum(s**2) == pytest.approx(1.0)
        assert entropy_bits(s) == pytest.approx(_dense_entropy(psi, cut, 8), abs=1e-10)
    assert half_chain_entropy(m) == pytest.approx(_dense_entropy(psi, 4, 8), abs=1e-10)


def test_bell_pair_entropy_is_one_bit():
    psi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    assert half_chain_entropy(mps_from_statevector(psi)) == pytest.approx(1.0)


def test_product_state_entropy_zero():
    assert half_chain_entropy(product_mps([[1, 1], [1, 0], [0, 1]])) == pytest.approx(0.0, abs=1e-14)


def test_json_round_trip_and_format_check(rng):
    m = random_mps(5, 3, rng)
    back = MPS.from_json(m.to_json())
    assert all(np.array_equal(a, b) for a, b in zip(back.tensors, m.tensors))
    d = m.to_dict()
    d["format"] = "mps-v0"
    with pytest.raises(DataFormatError):
        MPS.from_dict(d)


def test_dense_limits():
    with pytest.raises(SizeLimitError):
        to_dense(basis_mps([0] * 21))
    with pytest.raises(ValueError):
        local_reductions_mps(basis_mps([0, 1]), 3)
