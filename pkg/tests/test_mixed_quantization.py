import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qelab.base_weyl import BaseSymbol, weyl_op
from qelab.fiber_geometry import (FiberSymbol, LieElement, enumerate_basis, moment_map_symbol,
                                  su2_generators)
from qelab.fiber_toeplitz import toeplitz_matrix
from qelab.mixed_quantization import (
    CertificationError, FiberTwist, HamiltonianSpec, MixedSymbol, build_hamiltonian,
    functional_calculus_residual, local_weyl_law_residual, microcanonical_average, mixed_op,
    mixed_commutator_residual, mixed_product_residual, mixed_trace_residual, propagator,
    quantum_variance, spectral_decompose, time_average_symbol, weyl_law_count)
from qelab.numerics import loglog_slope
from qelab.profiles import XiProfile

AZ = LieElement(np.pi * np.diag([1j, -1j]))
BX = LieElement(np.pi * np.array([[0, 1j], [1j, 0]]))
TH = 0.1234


def kinetic():
    return HamiltonianSpec(1, 1, 1.0)


def perturbed(eps=0.05):
    return HamiltonianSpec(1, 1, 1.0, ((BaseSymbol.cos(1, (1,)) * eps, AZ),))


def test_fiber_constant_symbol_is_base_weyl_tensor_identity():
    base = BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0)) + BaseSymbol.momentum(1, 0)
    p, K = 5, 6
    got = mixed_op(MixedSymbol.from_base(base, 1), p, K, TH).entries.toarray()
    want = np.kron(weyl_op(base, 1 / p, K, TH).entries.toarray(), np.eye(p + 1))
    assert np.abs(got - want).max() <= 1e-12


def test_fiber_only_symbol_is_identity_tensor_toeplitz():
    f = moment_map_symbol(BX)
    p, K = 4, 3
    got = mixed_op(MixedSymbol.from_fiber(f, 1), p, K).entries.toarray()
    want = np.kron(np.eye(2 * K + 1), toeplitz_matrix(f, p).entries)
    assert np.abs(got - want).max() <= 1e-12


def test_sine_times_moment_map_shift_blocks():
    f = moment_map_symbol(AZ)
    p, K = 3, 4
    M = mixed_op(MixedSymbol.tensor(BaseSymbol.sin(1, (1,)), f), p, K).entries.toarray()
    T = toeplitz_matrix(f, p).entries
    d = p + 1
    blk = M[d:2 * d, 0:d]  # mode -K+1 <- -K
    assert np.abs(blk - T / 2j).max() <= 1e-12
    assert np.abs(M[0:d, d:2 * d] + T / 2j).max() <= 1e-12


def test_real_symbol_gives_hermitian_operator():
    A = MixedSymbol.tensor(BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0)),
                           moment_map_symbol(BX))
    assert mixed_op(A, 6, 8, TH).hermitian_defect() <= 1e-12


def test_twist_offsets_per_weight():
    tw = FiberTwist((0.1,), ((0.0,), (0.25,)))
    offs = tw.offsets(1, 3, 1)
    assert np.allclose(offs[:, 0], 0.1 + 0.25 * enumerate_basis(1, 3).exponents[:, 1])
    assert not tw.uniform and FiberTwist((0.2,)).uniform


def test_product_and_commutator_exact_cases():
    A = MixedSymbol.tensor(BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 1.0)),
                           moment_map_symbol(AZ))
    c = MixedSymbol.from_base(BaseSymbol.constant(1, 1.5), 1)
    assert np.all(mixed_product_residual(A, c, [4, 8], j=0) <= 1e-12)
    assert np.all(mixed_commutator_residual(A, A, [4, 8]) <= 1e-12)


def test_commutator_reduces_to_base_case():
    A = MixedSymbol.from_base(BaseSymbol(1, {(0,): XiProfile.gaussian(1, 1.0, exps=(1,))}), 1)
    B = MixedSymbol.from_base(BaseSymbol.sin(1, (1,), XiProfile.gaussian(1, 1.0)), 1)
    ps = [8, 16, 32]
    res = mixed_commutator_residual(A, B, ps, theta=TH)
    assert loglog_slope(ps, res)[0] <= -1.7


def test_product_with_fiber_constant_factor_is_second_order():
    A = MixedSymbol.tensor(BaseSymbol.cos(1, (1,), XiProfile.gaussian(1, 2.0)),
                           moment_map_symbol(BX))
    C = MixedSymbol.from_base(BaseSymbol.sin(1, (1,), XiProfile.gaussian(1, 1.0)), 1)
    ps = [8, 16, 32]
    assert loglog_slope(ps, mixed_product_residual(A, C, ps, j=1, theta=TH))[0] <= -1.7
    assert loglog_slope(ps, mixed_product_residual(A, C, ps, j=0, theta=TH))[0] <= -0.7


def test_trace_examples():
    g = XiProfile.gaussian(1, 1.0)
    one = MixedSymbol.from_base(BaseSymbol(1, {(0,): g}), 1)
    assert np.all(mixed_trace_residual(one, [4, 8], theta=TH) <= 1e-10)
    # traceless fiber part: Tr T_mu vanishes exactly, and the integral is 0
    mu = MixedSymbol.tensor(BaseSymbol(1, {(0,): g}), moment_map_symbol(AZ))
    assert np.all(mixed_trace_residual(mu, [4, 8], theta=TH) <= 1e-12)


def test_hamiltonian_validation():
    with pytest.raises(ValueError):
        HamiltonianSpec(1, 1, 0.0)
    with pytest.raises(ValueError):
        HamiltonianSpec(1, 1, 1.0, ((BaseSymbol.kinetic(1), AZ),))
    assert perturbed().ellipticity_margin == 0.5


def test_unperturbed_spectrum_is_closed_form():
    p, K = 6, 10
    Hop = build_hamiltonian(kinetic(), p, K, TH)
    assert Hop.hermitian_defect() == 0
    ev = spectral_decompose(Hop, certify=False).eigenvalues
    k = np.arange(-K, K + 1)
    want = np.sort(np.repeat(((k + TH) / p) ** 2, p + 1))
    assert np.abs(ev - want).max() <= 1e-13


def test_perturbed_spectrum_is_real_and_certified():
    Hop = build_hamiltonian(perturbed(0.3), 8, 16, TH)
    assert Hop.hermitian_defect() <= 1e-12
    spec = spectral_decompose(Hop, window=(0.0, 1.0))
    assert spec.residual <= 1e-9 * np.abs(spec.eigenvalues).max()
    assert spec.trusted_upto == 1.0


def test_untrusted_window_is_rejected():
    Hop = build_hamiltonian(perturbed(0.3), 8, 4, TH)
    with pytest.raises(CertificationError):
        spectral_decompose(Hop, window=(0.0, 10.0))


def test_propagator_group_law_and_phases():
    p, K = 6, 8
    Hop = build_hamiltonian(perturbed(0.2), p, K, TH)
    spec = spectral_decompose(Hop, certify=False)
    I = np.eye(Hop.size)
    assert np.abs(propagator(Hop, 0.0, spec).toarray() - I).max() <= 1e-12
    U, V = propagator(Hop, 0.7, spec).toarray(), propagator(Hop, -0.7, spec).toarray()
    assert np.abs(U @ V - I).max() <= 1e-10
    assert np.abs(U.conj().T @ U - I).max() <= 1e-10
    H0 = build_hamiltonian(kinetic(), p, K, TH)
    U0 = propagator(H0, 0.4).diagonal()
    k = np.repeat(np.arange(-K, K + 1), p + 1)
    assert np.allclose(U0, np.exp(-1j * 0.4 * p * ((k + TH) / p) ** 2), atol=1e-12)


def test_functional_calculus_of_constant_is_exact():
    out = functional_calculus_residual(lambda E: np.full_like(E, 2.0), perturbed(),
                                       [4, 8], degree=4, max_mode=2)
    assert out["residual"].max() <= 1e-10


def test_local_weyl_law_with_unit_symbol_is_weyl_integrand():
    phi = lambda E: np.exp(-(E - 0.2) ** 2 / 0.08)  # noqa: E731
    one = MixedSymbol.from_base(BaseSymbol.constant(1), 1)
    out = local_weyl_law_residual(phi, one, kinetic(), [8, 16, 32], theta=TH)
    assert out["residual"][-1] < out["residual"][0]
    mu = MixedSymbol.from_fiber(moment_map_symbol(AZ), 1)
    out = local_weyl_law_residual(phi, mu, kinetic(), [8, 16], theta=TH)
    assert abs(out["integral"]) <= 1e-8 and out["residual"].max() <= 1e-8


def test_weyl_law_lattice_count():
    out = weyl_law_count(kinetic(), 0.5, [16, 32], theta=TH)
    assert out["volume"] == pytest.approx(2 * np.pi * 2 * np.sqrt(0.5), rel=1e-8)
    assert np.all(np.abs(out["ratio"] - 1) <= 0.1)
    lo = weyl_law_count(kinetic(), 0.2, [16], theta=TH)["ratio"][0]
    assert np.isnan(weyl_law_count(kinetic(), -1.0, [8], theta=TH)["ratio"][0])
    assert lo * 0.2 ** 0.5 <= out["ratio"][0] * 0.5 ** 0.5


def test_time_average_of_invariant_symbol_is_itself():
    A = MixedSymbol.from_base(BaseSymbol(1, {(0,): XiProfile.gaussian(1, 1.0)}), 1)
    tav = time_average_symbol(A, kinetic(), 1.0, degree=2, max_mode=2)
    x, xi = np.array([0.3, 1.2]), np.array([0.5, -0.2])
    w = np.array([[1, 0], [0.6, 0.8j]])
    assert np.allclose(tav(x, xi, w), A(x, xi, w), atol=1e-8)


def test_quantum_variance_of_constant_is_zero():
    c = MixedSymbol.from_base(BaseSymbol.constant(1, 0.7), 1)
    out = quantum_variance(c, kinetic(), 8, (0.2, 1.0), theta=TH)
    assert abs(out["variance"]) <= 1e-20 and out["count"] > 0


def test_microcanonical_average_of_traceless_moment_map_vanishes():
    f = lambda x, xi, w: moment_map_symbol(AZ)(w)  # noqa: E731
    assert abs(microcanonical_average(f, kinetic(), 0.2, 1.0)) <= 1e-10


@given(c1=st.floats(-2, 2), c2=st.floats(-2, 2), p=st.integers(2, 5))
def test_quantization_is_linear(c1, c2, p):
    A = MixedSymbol.tensor(BaseSymbol.cos(1, (1,)), moment_map_symbol(AZ))
    B = MixedSymbol.tensor(BaseSymbol.sin(1, (2,), XiProfile.gaussian(1, 1.0)),
                           FiberSymbol.monomial((1, 0), (0, 1)))
    lhs = mixed_op(A * c1 + B * c2, p, 4, TH).entries
    rhs = mixed_op(A, p, 4, TH).entries * c1 + mixed_op(B, p, 4, TH).entries * c2
    assert abs(lhs - rhs).max() <= 1e-12 * (1 + abs(c1) + abs(c2))
