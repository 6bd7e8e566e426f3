import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from qelab import classical_dynamics as cd
from qelab.base_weyl import BaseSymbol
from qelab.fiber_geometry import LieElement
from qelab.mixed_quantization import HamiltonianSpec

AZ = LieElement(np.pi * np.diag([1j, -1j]))
W0 = np.array([0.6, 0.8j])


@pytest.fixture(scope="module")
def F():
    return cd.FuchsianData.build()


def _axis_state(F, name="a1"):
    """State on the translation axis of a generator, moving in its direction."""
    A = F.generators[name].matrix
    lam, V = np.linalg.eig(A)
    o = np.argsort(-lam.real)
    V = V[:, o].real
    if np.linalg.det(V) < 0:
        V[:, 1] *= -1
    g = V / np.sqrt(np.linalg.det(V))
    return cd._state_from_frame(g, W0, 1.0, ()), F.generators[name].translation_length()


def test_group_certificates(F):
    assert max(F.certificate.values()) <= 1e-8
    assert F.relator().equals_projectively(cd.MoebiusElement(np.eye(2)))
    assert np.abs(F.rho_relator() - np.eye(2)).max() <= 1e-8
    for g in F.generators.values():
        assert abs(np.linalg.det(g.matrix) - 1) <= 1e-12


def test_moebius_composition_is_matrix_product(F):
    a, b = F.generators["a1"], F.generators["b2"]
    z = 0.3 + 1.7j
    assert abs((a @ b).act(z) - a.act(b.act(z))) <= 1e-12


def test_vertical_geodesic_before_reduction(F):
    s = cd.unit_state(1j, np.pi / 2, W0)
    for t in (0.1, 0.7, 2.5):
        out = cd.geodesic_flow(s, t, F, reduce=False)
        assert abs(out.x[0]) <= 1e-12
        assert out.x[1] == pytest.approx(np.exp(t), rel=1e-12)


def test_geodesic_flow_additivity(F):
    s = cd.unit_state(0.1 + 1.2j, 0.4, W0)
    a = cd.geodesic_flow(cd.geodesic_flow(s, 1.3, F), 2.2, F)
    b = cd.geodesic_flow(s, 3.5, F)
    assert a.same_point(b, tol=1e-9)


def test_axis_of_a1_closes_after_translation_length(F):
    s, ell = _axis_state(F)
    assert ell == pytest.approx(2 * np.arccosh(abs(F.generators["a1"].trace) / 2), rel=1e-14)
    out = cd.geodesic_flow(s, ell, F, max_leg=ell)
    assert out.same_point(s, tol=1e-9)


def test_horizontal_flow_without_crossing_keeps_fiber(F):
    s = cd.unit_state(1j, 0.3, W0)
    out = cd.horizontal_flow(s, 0.05, F)
    assert out.sides == ()
    assert np.abs(out.w - s.w).max() <= 1e-14


def test_horizontal_flow_applies_rho_of_crossed_sides(F):
    s = cd.unit_state(0.2 + 1.1j, 1.1, W0)
    out = cd.horizontal_flow(s, 4.0, F)
    assert len(out.sides) > 0
    assert np.abs(out.w - F.rho_of_sides(out.sides) @ s.w).max() <= 1e-12


def test_relator_loop_returns_fiber(F):
    word = [("a1", 1), ("b1", 1), ("a1", -1), ("b1", -1), ("a2", 1), ("b2", 1), ("a2", -1), ("b2", -1)]
    assert np.abs(F.word_rho(word) @ W0 - W0).max() <= 1e-8


def test_hamiltonian_flow_at_eps0_is_geodesic_at_double_time(F):
    Hc = cd.ClassicalHamiltonian("hyperbolic", group=F)
    s = cd.unit_state(0.15 + 1.05j, 0.7, W0)
    out = cd.hamiltonian_flow(s, Hc, 1.5, 1e-3)
    ref = cd.horizontal_flow(s, 3.0, F)
    assert out.same_point(ref, tol=1e-9)


def test_fiber_only_hamiltonian_is_matrix_exponential():
    c = 1.7
    b = np.array([[0.3j, 0.5 + 0.2j], [-0.5 + 0.2j, -0.3j]])
    Hs = HamiltonianSpec(1, 1, 1.0, ((BaseSymbol.constant(1, c), LieElement(b)),))
    Hc = cd.ClassicalHamiltonian("torus", spec=Hs)
    s = cd.FlowState([0.4], [0.0], W0, "torus")
    t = 2.0
    out = cd.hamiltonian_flow(s, Hc, t, 1e-3)
    ref = expm(c * t * b / (2 * np.pi)) @ s.w
    assert abs(abs(np.vdot(out.w, ref)) - 1) <= 1e-12
    assert np.abs(out.w - ref).max() <= 1e-9
    assert abs(out.x[0] - 0.4) <= 1e-14


def test_energy_drift_torus_and_hyperbolic(F):
    Hs = HamiltonianSpec(1, 1, 1.0, ((BaseSymbol.cos(1, (1,)) * 0.1, AZ),))
    Ht = cd.ClassicalHamiltonian("torus", spec=Hs)
    st_ = cd.FlowState([0.4], [0.7], W0, "torus")
    assert cd.energy_drift(st_, Ht, 20.0, 1e-3) <= 1e-8
    Hh = cd.ClassicalHamiltonian("hyperbolic", epsilon=0.05, a=AZ, group=F)
    sh = cd.unit_state(0.15 + 1.05j, 0.7, W0)
    assert cd.energy_drift(sh, Hh, 20.0, 1e-3) <= 1e-8


def test_drift_monitor_raises_with_trace(F):
    Hh = cd.ClassicalHamiltonian("hyperbolic", epsilon=0.05, a=AZ, group=F)
    sh = cd.unit_state(0.15 + 1.05j, 0.7, W0)
    with pytest.raises(cd.StepSizeError) as info:
        cd.hamiltonian_flow(sh, Hh, 5.0, 0.2, drift_tol=1e-14, monitor_every=1)
    assert info.value.drift_trace is not None and len(info.value.drift_trace) > 0


def test_hamiltonian_validation():
    with pytest.raises(ValueError):
        cd.ClassicalHamiltonian("sphere")
    with pytest.raises(ValueError):
        cd.ClassicalHamiltonian("torus")
    with pytest.raises(ValueError):
        cd.ClassicalHamiltonian("hyperbolic", epsilon=0.1)
    with pytest.raises(ValueError):
        cd.ClassicalHamiltonian("hyperbolic", bump_radius=2.0)


def test_symplectic_residual_zero_time_and_geodesic(F):
    Hc = cd.ClassicalHamiltonian("hyperbolic", group=F)
    s = cd.unit_state(0.15 + 1.05j, 0.7, W0)
    assert cd.symplectic_residual(Hc, s, 0.0) == 0.0
    assert cd.symplectic_residual(Hc, s, 1.0, dt=1e-3) <= 1e-6


def test_symplectic_residual_torus_perturbed():
    Hs = HamiltonianSpec(1, 1, 1.0, ((BaseSymbol.cos(1, (1,)) * 0.1, AZ),))
    Hc = cd.ClassicalHamiltonian("torus", spec=Hs)
    s = cd.FlowState([0.4], [0.7], W0, "torus")
    assert cd.symplectic_residual(Hc, s, 2.0, dt=1e-3) <= 1e-10


def test_empty_su_path_is_identity(F):
    s = cd.unit_state(0.1 + 1.1j, 0.2, W0)
    h = cd.su_path_holonomy(s, cd.SuPathSpec(()), F)
    assert np.array_equal(h.R, np.eye(2))
    assert h.closed


def test_su_path_rejects_bad_legs():
    with pytest.raises(ValueError):
        cd.SuPathSpec((("sideways", 1.0),))
    with pytest.raises(ValueError):
        cd.SuPathSpec((("flow", np.inf),))


def test_a1_axis_loop_holonomy_is_word_product(F):
    s, ell = _axis_state(F)
    h = cd.su_path_holonomy(s, cd.SuPathSpec((("flow", ell),)), F, require_closed=True)
    assert h.closed
    assert h.word == [("a1", -1)]
    assert np.abs(h.R - F.word_rho(h.word)).max() <= 1e-12
    assert np.abs(h.R - F.rho["a1"].conj().T).max() <= 1e-12


def test_non_closing_path_raises(F):
    s = cd.unit_state(0.1 + 1.1j, 0.2, W0)
    with pytest.raises(cd.ClosureError):
        cd.su_path_holonomy(s, cd.SuPathSpec((("flow", 0.9),)), F, require_closed=True)


def test_reversed_path_inverts_holonomy(F):
    s = cd.unit_state(0.1 + 1.1j, 0.2, W0)
    p = cd.SuPathSpec((("stable", 0.3), ("flow", 0.7), ("unstable", -0.4), ("flow", 2.1)))
    a = cd.su_path_holonomy(s, p, F)
    b = cd.su_path_holonomy(a.end, p.reversed(), F)
    assert np.abs(b.R @ a.R - np.eye(2)).max() <= 1e-10
    assert np.abs(a.R - F.word_rho(a.word)).max() <= 1e-12


def test_holonomy_radii_monotone_from_diameter(F):
    radii = cd.holonomy_density_scan(F, L_max=4, net_size=4000)
    assert radii[0] == pytest.approx(np.pi, abs=1e-12)
    assert np.all(np.diff(radii) <= 1e-12)
    assert radii[-1] < radii[0]


def test_density_scan_rejects_higher_rank():
    with pytest.raises(ValueError):
        cd.holonomy_density_scan(cd.FuchsianData.build(n=2), L_max=1, net_size=10)


def test_birkhoff_constant_is_exact(F):
    Hc = cd.ClassicalHamiltonian("hyperbolic", epsilon=0.05, a=AZ, group=F)
    s = cd.unit_state(0.15 + 1.05j, 0.7, W0)
    assert cd.birkhoff_average(cd.Observable("constant", value=0.37), s, 3.0, 1e-2, Hc) == 0.37


def test_birkhoff_base_energy_is_conserved(F):
    Hc = cd.ClassicalHamiltonian("hyperbolic", group=F)
    s = cd.unit_state(0.15 + 1.05j, 0.7, W0, energy=1.0)
    v = cd.birkhoff_average(cd.Observable("base_energy"), s, 5.0, 1e-3, Hc)
    assert v == pytest.approx(1.0, abs=1e-9)


def test_sampler_deterministic_and_on_surface(F):
    Hc = cd.ClassicalHamiltonian("hyperbolic", epsilon=0.05, a=AZ, group=F)
    a = cd.energy_surface_sampler(Hc, 1.0, 40, seed=7)
    b = cd.energy_surface_sampler(Hc, 1.0, 40, seed=7)
    assert all(np.array_equal(u.as_vector(), v.as_vector()) for u, v in zip(a, b))
    E = np.array([Hc.energy(s) for s in a])
    assert np.abs(E - 1.0).max() <= 1e-12
    assert np.all(F.contains(np.array([s.z for s in a]), tol=1e-9))


def test_sampler_eps0_fiber_is_uniform(F):
    Hc = cd.ClassicalHamiltonian("hyperbolic", group=F)
    states = cd.energy_surface_sampler(Hc, 1.0, 4000, seed=3)
    w = np.array([s.w for s in states])
    # |w_0|^2 is uniform on [0, 1] under the Fubini-Study measure on CP^1
    p0 = np.abs(w[:, 0]) ** 2
    assert abs(p0.mean() - 0.5) <= 3 * np.sqrt(1 / 12 / len(p0))


def test_sampler_rejects_irregular_level():
    Hs = HamiltonianSpec(1, 1, 1.0, ((BaseSymbol.constant(1, 10.0), AZ),))
    Hc = cd.ClassicalHamiltonian("torus", spec=Hs)
    with pytest.raises(cd.RegularValueError):
        cd.energy_surface_sampler(Hc, 0.5, 10, seed=0)


def test_torus_control_dispersion_does_not_vanish():
    Hc = cd.ClassicalHamiltonian("torus", spec=HamiltonianSpec(2, 1, 1.0, ()))
    tab = cd.ergodicity_scan(Hc, 1.0, 30, [10.0, 100.0],
                             battery=[cd.Observable("cos_x", m=(1, 0))], seed=1, dt=0.05)
    assert tab.ratio()[0] > 1 / 3


@given(t1=st.integers(1, 40), t2=st.integers(1, 40))
def test_torus_flow_group_law(t1, t2):
    Hs = HamiltonianSpec(1, 1, 1.0, ((BaseSymbol.cos(1, (1,)) * 0.2, AZ),))
    Hc = cd.ClassicalHamiltonian("torus", spec=Hs)
    dt = 0.01
    s = cd.FlowState([0.4], [0.7], W0, "torus")
    a = cd.hamiltonian_flow(cd.hamiltonian_flow(s, Hc, t1 * dt, dt), Hc, t2 * dt, dt)
    b = cd.hamiltonian_flow(s, Hc, (t1 + t2) * dt, dt)
    assert a.same_point(b, tol=1e-12)
