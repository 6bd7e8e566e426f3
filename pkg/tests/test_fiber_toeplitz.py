from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from qelab.fiber_geometry import (
    ExactnessError, FiberSymbol, LieElement, enumerate_basis, fiber_quadrature,
    moment_map_symbol, sample_fiber_points, su2_generators)
from qelab.fiber_toeplitz import (
    group_action_matrix, kostant_residual, lie_derivative_matrix, lie_exponential,
    toeplitz_matrix, toeplitz_matrix_closed_form, toeplitz_product_residual,
    toeplitz_trace_residual)
from qelab.numerics import loglog_slope


def real_symbol(rng, n, d):
    m = comb(d + n, n)
    c = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return FiberSymbol(n, d, (c + c.conj().T) / 2)


def test_constant_symbol_gives_identity():
    for n, p in [(1, 1), (1, 16), (2, 4), (2, 8)]:
        T = toeplitz_matrix(FiberSymbol.constant(n), p).entries
        assert np.abs(T - np.eye(T.shape[0])).max() <= 1e-12


def test_beta_oracle_diagonal():
    p = 9
    T = toeplitz_matrix(FiberSymbol.monomial((1, 0), (1, 0)), p).entries
    alpha0 = enumerate_basis(1, p).exponents[:, 0]
    assert np.abs(T - np.diag((alpha0 + 1) / (p + 2))).max() <= 1e-13


def test_quadrature_matches_closed_form(rng):
    for n, d, p in [(1, 3, 12), (2, 2, 5)]:
        f = real_symbol(rng, n, d)
        a = toeplitz_matrix(f, p).entries
        b = toeplitz_matrix_closed_form(f, p).entries
        assert np.abs(a - b).max() <= 1e-12


def test_rejects_inexact_rule():
    with pytest.raises(ExactnessError):
        toeplitz_matrix(FiberSymbol.constant(1), 8, fiber_quadrature(1, 4))


def test_adjoint_and_hermitian(rng):
    f = FiberSymbol(1, 2, rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
    T, Tc = toeplitz_matrix(f, 10).entries, toeplitz_matrix(f.conj(), 10).entries
    assert np.abs(T.conj().T - Tc).max() <= 1e-12
    H = toeplitz_matrix(real_symbol(rng, 1, 2), 10).entries
    assert np.abs(H - H.conj().T).max() <= 1e-12


def test_norm_bounded_by_sup_norm(rng):
    pts = sample_fiber_points(1, 20000, rng)
    for _ in range(20):
        f = real_symbol(rng, 1, int(rng.integers(1, 4)))
        sup = np.abs(f(pts)).max()
        for p in (4, 64):
            assert toeplitz_matrix_closed_form(f, p).norm() <= sup + 1e-8


def test_product_residuals():
    f = moment_map_symbol(su2_generators()[0])
    r0 = toeplitz_product_residual(f, f, [4, 8], k=0)
    assert np.all(r0 > 1e-6)
    c = FiberSymbol.constant(1, 0.3)
    assert np.all(toeplitz_product_residual(c, f, [4, 8], k=0) <= 1e-12)
    assert np.all(toeplitz_product_residual(c, f, [4, 8], k=1) <= 1e-12)


def test_commutator_of_moment_maps_decays_at_second_order():
    a, b, _ = su2_generators()
    res = toeplitz_product_residual(moment_map_symbol(a), moment_map_symbol(b),
                                    [8, 16, 32, 64], k=1)
    slope, _ = loglog_slope([8, 16, 32, 64], res)
    # linear symbols: the commutator is exact up to rounding
    assert res.max() <= 1e-12 or slope <= -1.7


def test_commutator_battery_pair_decays_at_second_order(rng):
    f = real_symbol(np.random.default_rng(1), 1, 2)
    g = real_symbol(np.random.default_rng(2), 1, 2)
    ps = [8, 16, 32, 64, 128]
    slope, _ = loglog_slope(ps, toeplitz_product_residual(f, g, ps, k=1))
    assert slope <= -1.7


def test_trace_residual():
    assert np.all(toeplitz_trace_residual(FiberSymbol.constant(1), [1, 5, 20]) <= 1e-14)
    # the Bergman density of O(p) on CP^n is constant, so Tr T_f / dim is the
    # exact integral for every p
    for seed in range(5):
        f = real_symbol(np.random.default_rng(seed), 1, 2)
        assert np.all(toeplitz_trace_residual(f, [8, 16, 32, 64]) <= 1e-12)
    g = real_symbol(np.random.default_rng(9), 2, 2)
    assert np.all(toeplitz_trace_residual(g, [2, 5, 9]) <= 1e-12)


def test_lie_derivative_examples():
    assert np.all(lie_derivative_matrix(LieElement(np.zeros((2, 2))), 5).entries == 0)
    p = 7
    a = LieElement(np.diag([0.5j, -0.5j]))
    ex = enumerate_basis(1, p).exponents
    # pullback convention s -> s(exp(-ta) z) gives the sign below
    want = -1j * (ex[:, 0] - ex[:, 1]) / (2 * p)
    assert np.abs(lie_derivative_matrix(a, p).entries - np.diag(want)).max() <= 1e-15


def test_lie_derivative_is_antihermitian_and_a_representation(rng):
    a, b, _ = su2_generators()
    for p in (3, 8):
        La = lie_derivative_matrix(a, p).entries
        Lb = lie_derivative_matrix(b, p).entries
        Lab = lie_derivative_matrix(a.bracket(b), p).entries
        assert np.abs(La + La.conj().T).max() <= 1e-12
        assert np.abs(La @ Lb - Lb @ La - Lab / p).max() <= 1e-12


def test_lie_exponential_matches_group_action():
    a = su2_generators()[0] * 0.8 + su2_generators()[2] * 0.3
    for p in (2, 6):
        for t in (0.05, 0.3):
            got = lie_exponential(a, p, t)
            want = group_action_matrix(expm(t * a.matrix), p)
            assert np.abs(got - want).max() <= 1e-12


def test_kostant_identity_exact():
    assert kostant_residual(LieElement(np.zeros((2, 2))), 3) == 0
    for a in su2_generators():
        for p in range(1, 41):
            assert kostant_residual(a, p) <= 1e-10


def test_kostant_without_determinant_term_decays_like_inverse_p():
    a = su2_generators()[2]
    ps = [32, 64, 128, 256]
    res = [kostant_residual(a, p, include_det=False) for p in ps]
    assert min(res) > 1e-3
    assert loglog_slope(ps, res)[0] == pytest.approx(-1, abs=0.05)


@given(seed=st.integers(0, 10 ** 6), p=st.integers(1, 12))
def test_toeplitz_is_linear_and_positive(seed, p):
    rng = np.random.default_rng(seed)
    f, g = real_symbol(rng, 1, 2), real_symbol(rng, 1, 2)
    Tf, Tg = toeplitz_matrix(f, p).entries, toeplitz_matrix(g, p).entries
    assert np.abs(toeplitz_matrix(f + g * 2.0, p).entries - Tf - 2 * Tg).max() <= 1e-11
    pos = f * f
    assert np.linalg.eigvalsh(toeplitz_matrix(pos, p).entries).min() >= -1e-12
