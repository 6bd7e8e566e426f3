from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_unitary
from qelab.fiber_geometry import (
    ExactnessError, FiberDomainError, FiberPoint, FiberSymbol, LieElement, bergman_dim,
    det_moment_map, enumerate_basis, fiber_quadrature, fs_poisson_bracket, integrate_fiber,
    integrate_fiber_exact, moment_map, moment_map_symbol, monte_carlo_rule, su2_generators)


def random_real_symbol(rng, n, d):
    m = comb(d + n, n)
    c = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return FiberSymbol(n, d, (c + c.conj().T) / 2)


def test_basis_sizes():
    assert enumerate_basis(1, 3).dim == 4
    assert enumerate_basis(2, 2).dim == 6
    b = enumerate_basis(1, 1)
    assert b.norms[0] == pytest.approx(b.norms[1], abs=0)


def test_basis_size_matches_dimension_formula():
    for n in (1, 2):
        for p in range(1, 65):
            assert enumerate_basis(n, p).dim == bergman_dim(n, p) == comb(p + n, n)


def test_dimension_grows_like_volume_times_p():
    assert bergman_dim(1, 10 ** 6) / 10 ** 6 == pytest.approx(1.0, rel=1e-5)


@pytest.mark.parametrize("n, p", [(0, 3), (1, 0), (-1, 2)])
def test_domain_errors(n, p):
    with pytest.raises(FiberDomainError):
        enumerate_basis(n, p)
    with pytest.raises(FiberDomainError):
        bergman_dim(n, p)


def test_fiber_volume_is_one():
    rule = fiber_quadrature(1, 0)
    assert integrate_fiber(FiberSymbol.constant(1), rule) == pytest.approx(1.0, abs=1e-14)


def test_beta_integral_oracle():
    # int |z0|^2/|z|^2 over CP^1 with unit volume: u = |w0|^2 is uniform on [0, 1]
    f = FiberSymbol.monomial((1, 0), (1, 0))
    assert integrate_fiber(f, fiber_quadrature(1, 1)).real == pytest.approx(0.5, abs=1e-14)
    # higher moments: u^k integrates to 1/(k+1)
    for k in range(1, 8):
        g = FiberSymbol.monomial((k, 0), (k, 0))
        assert integrate_fiber(g, fiber_quadrature(1, k)).real == pytest.approx(1 / (k + 1),
                                                                                rel=1e-12)


def test_moment_map_integral_is_average_of_weights():
    s = 0.7
    a = LieElement(np.diag([1j, -1j]) * s)
    weights = [moment_map(a, [1, 0]), moment_map(a, [0, 1])]
    val = integrate_fiber(moment_map_symbol(a), fiber_quadrature(1, 2))
    assert val.real == pytest.approx(np.mean(weights), abs=1e-14)


def test_quadrature_rejects_insufficient_exactness():
    f = FiberSymbol.monomial((2, 1), (1, 2))
    with pytest.raises(ExactnessError):
        integrate_fiber(f, fiber_quadrature(1, 2))


def test_quadrature_agrees_with_closed_form(rng):
    for n, d in [(1, 3), (2, 2), (2, 3)]:
        f = random_real_symbol(rng, n, d)
        q = integrate_fiber(f, fiber_quadrature(n, d))
        assert abs(q - integrate_fiber_exact(f)) <= 1e-12 * max(1, abs(q))


def test_monte_carlo_rule_within_declared_error(rng):
    f = random_real_symbol(rng, 2, 2)
    rule = monte_carlo_rule(2, 40000, seed=3)
    sd = np.std(f(rule.points).real)
    assert abs(integrate_fiber(f, rule) - integrate_fiber_exact(f)) <= 5 * sd * rule.stderr


def test_monomial_sections_are_orthogonal(rng):
    p = 6
    basis = enumerate_basis(1, p)
    rule = fiber_quadrature(1, 2 * p)
    for _ in range(50):
        i, j = rng.choice(basis.dim, 2, replace=False)
        a, b = basis.exponents[i], basis.exponents[j]
        ip = integrate_fiber(FiberSymbol.monomial(a, b), rule)
        assert abs(ip) <= 1e-12


def test_moment_map_values():
    a = LieElement(np.diag([0.5j, -0.5j]))
    v0, v1 = moment_map(a, [1, 0]), moment_map(a, [0, 1])
    assert v0 == pytest.approx(-v1, abs=1e-15) and v0 != 0
    zero = LieElement(np.zeros((2, 2)))
    assert moment_map(zero, [0.3, 0.4j]) == 0.0
    assert det_moment_map(zero, [0.3, 0.4j]) == 0.0


def test_det_moment_map_is_multiple_of_line_moment_map(rng):
    a = su2_generators()[0] * 0.3 + su2_generators()[2] * 1.1
    w = rng.standard_normal((20, 2)) + 1j * rng.standard_normal((20, 2))
    diff = det_moment_map(a, w) - 2 * moment_map(a, w)
    assert np.ptp(diff) <= 1e-14
    sym = 2 * moment_map_symbol(a)
    assert abs(integrate_fiber_exact(sym)) <= 1e-15


def test_moment_map_symbol_matches_closed_form(rng):
    for a in su2_generators():
        w = rng.standard_normal((10, 2)) + 1j * rng.standard_normal((10, 2))
        assert np.allclose(moment_map_symbol(a)(w), moment_map(a, w), atol=1e-15)


def test_moment_map_equivariance(rng):
    for n in (1, 2):
        for _ in range(10):
            h = rng.standard_normal((n + 1, n + 1)) + 1j * rng.standard_normal((n + 1, n + 1))
            h = h - h.conj().T
            a = LieElement(h - np.trace(h) / (n + 1) * np.eye(n + 1))
            u = random_unitary(rng, n + 1)
            w = rng.standard_normal(n + 1) + 1j * rng.standard_normal(n + 1)
            lhs = moment_map(a, u @ w)
            rhs = moment_map(LieElement(u.conj().T @ a.matrix @ u), w)
            assert lhs == pytest.approx(rhs, abs=1e-10)


def test_bracket_of_moment_maps_is_moment_map_of_bracket(rng):
    a, b, _ = su2_generators()
    fa, fb = moment_map_symbol(a), moment_map_symbol(b)
    fab = moment_map_symbol(a.bracket(b))
    for _ in range(20):
        w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        got = fs_poisson_bracket(fa, fb, w)
        assert got == pytest.approx(-fab(w) / (2 * np.pi), abs=1e-12)


def test_bracket_matches_finite_difference_flow(rng):
    # d/dt (g o flow_f) at t=0 by central differences of the moment-map flow
    a = su2_generators()[0] * 2.0
    f = moment_map_symbol(a)
    g = random_real_symbol(rng, 1, 2)
    from scipy.linalg import expm
    for _ in range(10):
        w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        w /= np.linalg.norm(w)
        h = 1e-5
        gp = g(expm(h * a.matrix / (2 * np.pi)) @ w).real
        gm = g(expm(-h * a.matrix / (2 * np.pi)) @ w).real
        assert fs_poisson_bracket(f, g, w) == pytest.approx((gp - gm) / (2 * h), abs=1e-7)


def test_bracket_handles_chart_boundary():
    f = FiberSymbol.monomial((1, 0), (0, 1)) + FiberSymbol.monomial((0, 1), (1, 0))
    g = FiberSymbol.monomial((1, 0), (1, 0))
    for w in ([1, 0], [0, 1], [1e-300, 1]):
        assert np.isfinite(fs_poisson_bracket(f, g, w))


unit_c = st.tuples(st.floats(-1, 1), st.floats(-1, 1)).map(lambda t: complex(*t))
points = st.tuples(unit_c, unit_c, unit_c).filter(lambda w: sum(abs(x) for x in w) > 1e-3)


@given(seed=st.integers(0, 10 ** 6), w=points, phi=st.floats(0, 2 * np.pi))
def test_symbols_are_phase_invariant(seed, w, phi):
    f = random_real_symbol(np.random.default_rng(seed), 2, 2)
    w = np.array(w)
    assert abs(f(w) - f(np.exp(1j * phi) * w)) <= 1e-14 * max(1.0, np.abs(f.coeffs).sum())


@given(seed=st.integers(0, 10 ** 6), w=points)
def test_bracket_antisymmetry_leibniz_and_constants(seed, w):
    rng = np.random.default_rng(seed)
    f, g, h = (random_real_symbol(rng, 2, d) for d in (1, 2, 1))
    pt = FiberPoint(np.array(w))
    fg = fs_poisson_bracket(f, g, pt)
    assert fs_poisson_bracket(g, f, pt) == pytest.approx(-fg, abs=1e-8)
    assert abs(fs_poisson_bracket(f, f, pt)) <= 1e-8
    assert abs(fs_poisson_bracket(f, FiberSymbol.constant(2), pt)) <= 1e-12
    lhs = fs_poisson_bracket(f, g * h, pt)
    rhs = fs_poisson_bracket(f, g, pt) * h(pt.coords).real + g(pt.coords).real * \
        fs_poisson_bracket(f, h, pt)
    assert lhs == pytest.approx(rhs, abs=1e-8)


@given(seed=st.integers(0, 10 ** 6), w=points)
def test_analytic_bracket_matches_pointwise_bracket(seed, w):
    rng = np.random.default_rng(seed)
    f, g = random_real_symbol(rng, 2, 2), random_real_symbol(rng, 2, 1)
    pt = FiberPoint(np.array(w))
    assert f.poisson_bracket(g)(pt.coords).real == pytest.approx(
        fs_poisson_bracket(f, g, pt), abs=1e-9)


def test_lie_element_validation():
    with pytest.raises(FiberDomainError):
        LieElement(np.eye(2))
    with pytest.raises(FiberDomainError):
        LieElement(np.diag([1j, 1j]))
