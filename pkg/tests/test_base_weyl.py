import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qelab.base_weyl import (
    BaseSymbol, CutoffError, ModeLattice, lattice_shift, moyal_terms, phase_conjugation,
    sobolev_weights, weyl_adjoint_residual, weyl_composition_residual, weyl_op, weyl_trace,
    weyl_trace_residual)
from qelab.numerics import loglog_slope, spectral_norm
from qelab.profiles import XiProfile

H_LIST = [2.0 ** -e for e in range(3, 9)]


def dense(A, h, K, theta=None):
    return weyl_op(A, h, K, theta).entries.toarray()


def test_momentum_is_diagonal():
    h, K, th = 0.1, 6, 0.3
    M = dense(BaseSymbol.momentum(1, 0), h, K, th)
    k = np.arange(-K, K + 1)
    assert np.allclose(M, np.diag(h * (k + th)), atol=0)


def test_exponential_is_shift():
    K = 5
    M = dense(BaseSymbol.exponential(1, (1,)), 0.2, K)
    assert np.array_equal(M, np.eye(2 * K + 1, k=-1))


def test_midpoint_rule_on_shifted_diagonal():
    h, K, th = 0.25, 4, 0.1
    A = BaseSymbol.exponential(1, (1,), XiProfile.monomial(1, (1,)))
    M = dense(A, h, K, th)
    k = np.arange(-K, K)
    assert np.allclose(np.diag(M, -1), h * (k + th + 0.5), atol=1e-15)
    assert np.count_nonzero(M) == len(k)


def test_cutoff_violation_raises():
    with pytest.raises(CutoffError):
        weyl_op(BaseSymbol.cos(1, (9,)), 0.1, 4)
    with pytest.raises(ValueError):
        weyl_op(BaseSymbol.constant(1), 0.0, 4)


def test_moyal_examples():
    xi, s = BaseSymbol.momentum(1, 0), BaseSymbol.sin(1, (1,))
    got = moyal_terms(xi, s, 1)
    x = np.linspace(0, 6, 7)
    assert np.allclose(got(x, np.zeros_like(x)), np.cos(x) / 2j, atol=1e-15)
    A = BaseSymbol.cos(1, (2,), XiProfile.gaussian(1, 1.0))
    assert not moyal_terms(A, A, 1).coeffs
    B = BaseSymbol(1, {(0,): XiProfile.gaussian(1, 0.5, exps=(1,))})
    assert not moyal_terms(BaseSymbol.kinetic(1), B, 1).coeffs
    assert moyal_terms(A, B, 0)(x, x) == pytest.approx(A(x, x) * B(x, x))


def test_composition_exact_cases():
    xi = BaseSymbol.momentum(1, 0)
    assert np.all(weyl_composition_residual(xi, xi, H_LIST[:3], j=0) <= 1e-12)
    c = BaseSymbol.constant(1, 2.5)
    A = BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0))
    for j in (0, 1):
        assert np.all(weyl_composition_residual(c, A, H_LIST[:3], j=j) <= 1e-12)


def test_composition_remainder_is_second_order():
    A = BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0))
    B = BaseSymbol.sin(1, (2,), XiProfile.gaussian(1, 0.5, center=0.3))
    res = weyl_composition_residual(A, B, H_LIST, j=1)
    assert loglog_slope(H_LIST, res)[0] >= 1.7  # slope in h, not 1/h
    res0 = weyl_composition_residual(A, B, H_LIST, j=0)
    assert loglog_slope(H_LIST, res0)[0] == pytest.approx(1.0, abs=0.15)


def test_composition_independent_of_cutoff():
    A = BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0))
    B = BaseSymbol.sin(1, (1,), XiProfile.gaussian(1, 1.0))
    a = weyl_composition_residual(A, B, [0.05], xi_window=2.0)
    b = weyl_composition_residual(A, B, [0.05], xi_window=4.0)
    assert a[0] == pytest.approx(b[0], rel=0.01)


def test_adjoint_relations(rng):
    prof = XiProfile.gaussian(1, 0.7, center=0.2, value=1 + 2j)
    A = BaseSymbol(1, {(1,): prof, (-2,): XiProfile.monomial(1, (1,), 0.5j)})
    assert weyl_adjoint_residual(A, 0.1, 20) <= 1e-12
    R = A + A.conj()
    M = dense(R, 0.1, 20)
    assert np.abs(M - M.conj().T).max() <= 1e-12
    iR = R * 1j
    N = dense(iR, 0.1, 20)
    assert np.abs(N + N.conj().T).max() <= 1e-12


def test_gaussian_trace_is_superpolynomially_accurate():
    A = BaseSymbol(1, {(0,): XiProfile.gaussian(1, 1.0)})
    res = weyl_trace_residual(A, [2.0 ** -3, 2.0 ** -6], theta=0.37)
    assert res[1] <= 1e-8
    assert weyl_trace_residual(A * 3.0, [0.125], theta=0.37)[0] == pytest.approx(3 * res[0])


def test_trace_of_pure_oscillation_is_zero():
    assert weyl_trace(BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0)), 0.1) == 0


def test_norms_bounded_uniformly_in_h():
    battery = [BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0)),
               BaseSymbol.sin(1, (2,)) + BaseSymbol.constant(1, 0.5),
               BaseSymbol.exponential(1, (1,), XiProfile.gaussian(1, 0.3, center=1.0))]
    for A in battery:
        norms = [spectral_norm(weyl_op(A, h, int(8 / h)).entries) for h in H_LIST]
        assert max(norms) <= 1.5


def test_sobolev_weights():
    lat = ModeLattice(1, 3)
    w = sobolev_weights(lat, 0.5, 2)
    assert np.allclose(w, 1 + (0.5 * np.arange(-3, 4)) ** 2)


@given(e=st.integers(-2, 2), theta=st.floats(0, 1, exclude_max=True),
       x0=st.floats(-3, 3))
def test_twist_covariance(e, theta, x0):
    A = BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0)) + \
        BaseSymbol.sin(1, (2,), XiProfile.monomial(1, (1,)))
    h, K = 0.1, 12
    O = weyl_op(A, h, K, theta)
    lat = O.lattice
    idx = lat.window(K - 3)
    # translation in x: conjugation by the diagonal phase
    P = phase_conjugation(lat, [x0], theta)
    lhs = (P @ O.entries @ P.conj().T)[idx][:, idx]
    rhs = weyl_op(A.translate_x([x0]), h, K, theta).entries[idx][:, idx]
    assert abs(lhs - rhs).max() <= 1e-12
    # lattice shift by e: same as shifting the twist by e
    S = lattice_shift(lat, [e])
    lhs = (S.T @ O.entries @ S)[idx][:, idx]
    rhs = weyl_op(A, h, K, theta + e).entries[idx][:, idx]
    assert abs(lhs - rhs).max() <= 1e-12
