from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ubm.errors import DimensionError, NotHermitianError, NotUnitaryError
from ubm.linalg import (check_trace_inequalities, complex_matrix, dagger, elementary, hermitian_matrix,
                        trace_product, unitarity_defect, unitary_exp_i, unitary_matrix)


def _ginibre(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def _hermitian(rng, n):
    g = _ginibre(rng, n)
    return (g + g.conj().T) / 2


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def complex_square(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    re = draw(arrays(np.float64, (n, n), elements=finite))
    im = draw(arrays(np.float64, (n, n), elements=finite))
    return re + 1j * im


# ---------------------------------------------------------------- trace_product

def test_trace_product_identity():
    assert trace_product(np.eye(3), np.eye(3)) == 3


def test_trace_product_elementary_pair():
    assert trace_product(elementary(4, 0, 1), elementary(4, 1, 0)) == 1


def test_trace_product_frobenius_norm():
    rng = np.random.default_rng(3)
    a = _ginibre(rng, 7)
    oracle = sum(abs(a[i, j]) ** 2 for i in range(7) for j in range(7))
    val = trace_product(a, a.conj().T)
    assert val.imag == pytest.approx(0, abs=1e-12)
    assert val.real >= 0
    assert val.real == pytest.approx(oracle, rel=1e-13)


def test_trace_product_dimension_mismatch():
    with pytest.raises(DimensionError):
        trace_product(np.eye(2), np.eye(3))


@settings(max_examples=60, deadline=None)
@given(complex_square(), st.data())
def test_trace_product_symmetric(a, data):
    n = a.shape[0]
    re = data.draw(arrays(np.float64, (n, n), elements=finite))
    b = re + 1j * re.T
    scale = 1 + np.abs(a).sum() * np.abs(b).sum()
    assert abs(trace_product(a, b) - trace_product(b, a)) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(complex_square(), st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_trace_product_bilinear(a, lam):
    b = np.eye(a.shape[0]) + a.T
    scale = 1 + np.abs(a).sum() * np.abs(b).sum()
    assert abs(trace_product(lam * a, b) - lam * trace_product(a, b)) <= 1e-12 * scale * (1 + abs(lam))


# ---------------------------------------------------------------- unitary_exp_i

def test_exp_zero_is_identity():
    np.testing.assert_allclose(unitary_exp_i(np.zeros((3, 3))), np.eye(3), atol=1e-15)


def test_exp_diag_pi():
    np.testing.assert_allclose(unitary_exp_i(np.diag([math.pi, 0.0])), np.diag([-1, 1]), atol=1e-14)


def test_exp_matches_power_series():
    rng = np.random.default_rng(11)
    h = _hermitian(rng, 4) / 2
    series = np.zeros((4, 4), dtype=complex)
    term = np.eye(4, dtype=complex)
    for k in range(31):
        series += term
        term = term @ (1j * h) / (k + 1)
    np.testing.assert_allclose(unitary_exp_i(h), series, atol=1e-10)


def test_exp_rejects_non_hermitian():
    with pytest.raises(NotHermitianError):
        unitary_exp_i(np.array([[0, 1], [0, 0]]))


def test_exp_stack_matches_single():
    rng = np.random.default_rng(5)
    hs = np.stack([_hermitian(rng, 3) for _ in range(4)])
    stacked = unitary_exp_i(hs)
    for h, u in zip(hs, stacked):
        np.testing.assert_allclose(u, unitary_exp_i(h), atol=1e-13)


@settings(max_examples=80, deadline=None)
@given(complex_square(max_n=8))
def test_exp_inverse_and_unitary(g):
    h = (g + g.conj().T) / 2
    u = unitary_exp_i(h)
    v = unitary_exp_i(-h)
    assert np.linalg.norm(u @ v - np.eye(h.shape[0])) <= 1e-10
    assert unitarity_defect(u) <= 1e-10


# ---------------------------------------------------------------- validators

def test_complex_matrix_rejects_shapes_and_nan():
    with pytest.raises(DimensionError):
        complex_matrix(np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        complex_matrix(np.array([[np.nan]]))


def test_validated_copies_are_frozen():
    m = hermitian_matrix(np.eye(2))
    with pytest.raises(ValueError):
        m[0, 0] = 2


def test_unitary_validator():
    unitary_matrix(np.array([[0, 1j], [1, 0]]))
    with pytest.raises(NotUnitaryError):
        unitary_matrix(np.diag([1.0, 1.0 + 1e-8]))


def test_unitarity_defect_on_frame_and_stack():
    f = np.eye(4)[:, :2]
    assert unitarity_defect(f) == 0
    assert unitarity_defect(np.stack([np.eye(3), 2 * np.eye(3)])).tolist() == [0.0, 3 * math.sqrt(3)]


def test_dagger():
    a = np.array([[1, 2j], [3, 4]])
    np.testing.assert_array_equal(dagger(a), np.array([[1, 3], [-2j, 4]]))


# ---------------------------------------------------------------- trace inequalities

def test_inequalities_identity_equality():
    i2 = np.eye(2)
    assert check_trace_inequalities(i2, i2, i2, i2) == (True, True, True)
    # equality in (i): |Tr(I I)| = 2 = sqrt(2) sqrt(2)
    assert abs(trace_product(i2, i2)) == pytest.approx(2.0)


def test_inequalities_rank_one_equality():
    e = elementary(3, 0, 0)
    assert check_trace_inequalities(e, e, e, e) == (True, True, True)
    assert trace_product(e, e).real == pytest.approx(1.0)  # Tr(G^2) = (Tr G)^2 = 1


def test_inequalities_detect_violation_via_tolerance():
    # a non-PSD Hermitian G breaks (ii): Tr(G^2) = 2 > (Tr G)^2 = 0
    g = np.diag([1.0, -1.0])
    assert check_trace_inequalities(np.eye(2), np.eye(2), g, np.eye(2))[1] is False


def test_inequalities_reject_non_hermitian():
    with pytest.raises(NotHermitianError):
        check_trace_inequalities(np.eye(2), np.eye(2), np.array([[1, 1], [0, 1]]), np.eye(2))


def test_inequalities_random_sweep():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        n = int(rng.integers(1, 6))
        x, y = _ginibre(rng, n), _ginibre(rng, n)
        mg, mh = _ginibre(rng, n), _ginibre(rng, n)
        assert check_trace_inequalities(x, y, mg @ mg.conj().T, mh @ mh.conj().T) == (True, True, True)
