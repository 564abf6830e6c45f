import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kirchloc import (
    DirichletProximity,
    EdgeProfile,
    InvalidProfile,
    boundary_values,
    dirichlet_eigenvalues,
    dirichlet_green,
    solve_basis,
)
from oracles import dirichlet_green_fd, zero_potential_closed_form

# finite-difference resolvent of -y'' + y on [0, 1], step 1e-4
FD_GREEN_E_MINUS1 = 0.07890785805830644


def test_free_edge_at_zero_energy():
    b = solve_basis(EdgeProfile.zero(1.0), 0.0)
    assert (b.phi_l, b.dphi_l, b.theta_l, b.dtheta_l) == pytest.approx((1, 1, 1, 0), abs=1e-14)
    assert b.eta == pytest.approx(2.0, abs=1e-14)


def test_dirichlet_point_at_pi():
    assert solve_basis(EdgeProfile.zero(math.pi), 1.0).phi_l == pytest.approx(0.0, abs=1e-14)


def test_negative_energy_closed_form():
    b = solve_basis(EdgeProfile.zero(1.0), -25.0)
    assert b.phi_l == pytest.approx(math.sinh(5) / 5, rel=1e-13)
    assert b.eta == pytest.approx(2 * math.cosh(5), rel=1e-13)


def test_constant_potential_equal_to_energy_is_linear():
    b = solve_basis(EdgeProfile.constant(1.0, 1.0), 1.0)
    assert (b.theta_l, b.dtheta_l, b.phi_l) == pytest.approx((1, 0, 1), abs=1e-13)


def test_sampled_potential_uses_rk4_and_converges():
    u = np.sin(np.linspace(0, 3, 41))
    coarse = solve_basis(EdgeProfile.sampled(1.3, u, integration_steps=2000), 2.0).phi_l
    fine = solve_basis(EdgeProfile.sampled(1.3, u, integration_steps=4000), 2.0).phi_l
    assert abs(coarse - fine) <= 1e-9 * abs(fine)


def test_sampled_constant_agrees_with_exact_transfer():
    exact = boundary_values(EdgeProfile.constant(0.9, 2.0), 5.0)
    rk = boundary_values(EdgeProfile.sampled(0.9, [2.0] * 7), 5.0)
    np.testing.assert_allclose(rk, exact, rtol=1e-10, atol=1e-12)


def test_piecewise_potential_matches_sampled_refinement():
    pw = EdgeProfile.piecewise(1.0, [0.4], [0.0, 3.0])
    x = np.linspace(0, 1, 20001)
    sampled = EdgeProfile.sampled(1.0, np.where(x < 0.4, 0.0, 3.0), integration_steps=20000)
    assert boundary_values(pw, 4.0)[0] == pytest.approx(boundary_values(sampled, 4.0)[0], rel=1e-3)


def test_invalid_profiles_rejected():
    with pytest.raises(InvalidProfile):
        EdgeProfile.zero(-1.0)
    with pytest.raises(InvalidProfile):
        EdgeProfile.piecewise(1.0, [1.5], [0.0, 1.0])
    with pytest.raises(InvalidProfile):
        EdgeProfile.sampled(1.0, [0.0, np.nan])
    with pytest.raises(InvalidProfile):
        solve_basis("not a profile", 1.0)


def test_profile_round_trip():
    p = EdgeProfile.piecewise(2.0, [0.5, 1.5], [0.0, 1.0, -2.0])
    assert EdgeProfile.from_dict(p.to_dict()) == p


@given(st.floats(0.1, 3.0), st.floats(-100.0, 100.0))
def test_boundary_values_match_closed_form(length, energy):
    got = boundary_values(EdgeProfile.zero(length), energy)
    want = zero_potential_closed_form(length, energy)
    scale = max(1.0, abs(want[2]), abs(want[3]))
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12 * scale)


@given(st.floats(0.1, 2.0), st.floats(-100.0, 100.0))
def test_normalized_wronskian(length, energy):
    b = solve_basis(EdgeProfile.zero(length), energy)
    size = np.abs(b.phi * b.dtheta) + np.abs(b.theta * b.dphi)
    assert np.max(b.wronskian_defect() / np.maximum(size, 1.0)) < 1e-12


def test_eta_asymptotics():
    for E in (-1e3, -1e4):
        eta = solve_basis(EdgeProfile.zero(1.0), E).eta
        assert eta / (2 * math.cosh(math.sqrt(-E))) == pytest.approx(1.0, abs=1e-6)


class TestDirichletEigenvalues:
    def test_pi_edge(self):
        np.testing.assert_allclose(dirichlet_eigenvalues(EdgeProfile.zero(math.pi), (0, 10)),
                                   [1, 4, 9], atol=1e-9)

    def test_unit_edge_window_has_none(self):
        assert dirichlet_eigenvalues(EdgeProfile.zero(1.0), (-5, 5)) == []

    def test_constant_shift(self):
        np.testing.assert_allclose(
            dirichlet_eigenvalues(EdgeProfile.constant(math.pi, 2.0), (0, 12)), [3, 6, 11], atol=1e-9)

    def test_roots_are_zeros(self):
        p = EdgeProfile.sampled(1.5, [0.0, 2.0, -1.0, 0.5])
        roots = dirichlet_eigenvalues(p, (-5, 60))
        assert len(roots) >= 2
        assert np.all(np.abs(boundary_values(p, np.array(roots))[0]) < 1e-9)


class TestDirichletGreen:
    def test_midpoint_at_zero_energy(self):
        assert dirichlet_green(EdgeProfile.zero(1.0), 0.0, 0.5, 0.5) == pytest.approx(0.25, abs=1e-14)

    def test_vanishes_at_ends(self):
        p = EdgeProfile.constant(1.0, 0.7)
        assert dirichlet_green(p, 1.5, 0.0, 0.4) == pytest.approx(0.0, abs=1e-14)
        assert dirichlet_green(p, 1.5, 0.4, 1.0) == pytest.approx(0.0, abs=1e-14)

    def test_frozen_grid_oracle(self):
        assert dirichlet_green(EdgeProfile.zero(1.0), -1.0, 0.3, 0.7) == pytest.approx(
            FD_GREEN_E_MINUS1, abs=1e-4)

    def test_live_grid_oracle_nonconstant(self):
        p = EdgeProfile.sampled(1.0, [0.0, 1.0, 0.5])
        ref = dirichlet_green_fd(p.potential, 1.0, -0.5, 0.25, 0.6, h=1e-4)
        assert dirichlet_green(p, -0.5, 0.25, 0.6) == pytest.approx(ref, abs=1e-4)

    def test_symmetric_and_solves_ode(self):
        p = EdgeProfile.zero(1.0)
        E, tp, h = -3.0, 0.6, 1e-3
        assert dirichlet_green(p, E, 0.2, tp) == pytest.approx(dirichlet_green(p, E, tp, 0.2))
        t = np.array([0.3 - h, 0.3, 0.3 + h])
        g = dirichlet_green(p, E, t, tp)
        residual = -(g[0] - 2 * g[1] + g[2]) / h**2 - E * g[1]
        assert abs(residual) < 1e-5
        # derivative jump -1 at the source
        left = (dirichlet_green(p, E, tp, tp) - dirichlet_green(p, E, tp - h, tp)) / h
        right = (dirichlet_green(p, E, tp + h, tp) - dirichlet_green(p, E, tp, tp)) / h
        assert right - left == pytest.approx(-1.0, abs=1e-2)

    def test_rejects_dirichlet_energy(self):
        with pytest.raises(DirichletProximity):
            dirichlet_green(EdgeProfile.zero(1.0), math.pi**2, 0.2, 0.5)
