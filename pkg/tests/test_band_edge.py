import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.stats import linregress

from kirchloc import (
    ConditioningFailure,
    DisorderModel,
    EdgeProfile,
    InsufficientData,
    LatticeSpec,
    ShiftedOperator,
    band_edges,
    combes_thomas_check,
    detect_edges,
    ids_curve,
    lifshitz_fit,
    log_grid,
    probability_bound_check,
    sample_disorder,
)
from kirchloc.lattice import hopping_coefficients


class TestEdges:
    def test_free_chain_edge_at_zero(self, unit_chain):
        rep = detect_edges(unit_chain, DisorderModel(0, 0), (-2, 2))
        assert rep.edges == pytest.approx([0.0], abs=1e-9)
        assert rep.factors == ["m_plus"]

    @pytest.mark.parametrize("c", [-0.4, 0.3, 1.0])
    def test_shifted_disorder_solves_substituted_equation(self, unit_chain, c):
        rep = detect_edges(unit_chain, DisorderModel(c, c), (-3, 9))
        assert rep.edges
        for e, which in zip(rep.edges, rep.factors):
            h = hopping_coefficients(unit_chain, e)
            s = 2 * abs(h.b[0])
            f = s - h.a - c if which == "m_plus" else -s - h.a - c
            assert abs(f) < 1e-6

    def test_edges_move_continuously(self, unit_chain):
        cs = np.linspace(0.0, 0.5, 6)
        first = [detect_edges(unit_chain, DisorderModel(c, c), (-3, 3)).edges[0] for c in cs]
        assert np.all(np.diff(first) > 0) and np.max(np.diff(first)) < 0.5

    def test_band_interior(self, unit_chain):
        assert detect_edges(unit_chain, DisorderModel(0, 0), (1, 4)).edges == []

    @pytest.mark.parametrize("model", [DisorderModel(-1, 1, coupling=3.0), DisorderModel(0.5, 2, coupling=10.0)])
    def test_agrees_with_band_scan(self, unit_square, model):
        window = (-6, 9.5)
        edges = detect_edges(unit_square, model, window).edges
        ends = [x for band in band_edges(unit_square, model, window).bands for x in band
                if window[0] < x < window[1]]
        for e in edges:
            assert min(abs(e - x) for x in ends) < 1e-6


class TestShiftedOperator:
    @given(st.integers(0, 2**31), st.floats(0.1, 5.0), st.floats(-3, 9))
    def test_nonnegative(self, seed, lam, E0):
        lat = LatticeSpec.isotropic(1, EdgeProfile.zero(1.0))
        m = DisorderModel(-1, 1, coupling=lam, master_seed=seed)
        op = ShiftedOperator(lat, m, E0, 15)
        for i in range(5):
            assert op.smallest(sample_disorder(m, op.sites, i)) >= -1e-8

    def test_nonnegative_square(self, unit_square):
        m = DisorderModel(0, 1, master_seed=3)
        op = ShiftedOperator(unit_square, m, 1.0, 4)
        assert min(op.smallest(sample_disorder(m, op.sites, i)) for i in range(20)) >= -1e-8

    @given(st.integers(0, 2**31), st.integers(1, 40))
    def test_sturm_counts_match_eigenvalues(self, seed, radius):
        lat = LatticeSpec.isotropic(1, EdgeProfile.zero(1.0))
        m = DisorderModel(0, 1, coupling=2.0, master_seed=seed)
        op = ShiftedOperator(lat, m, 1.0, radius)
        alphas = sample_disorder(m, op.sites, np.arange(3))
        eps = np.linspace(-0.5, 7, 31)
        counts = op.count_below(alphas, eps)
        for i, al in enumerate(alphas):
            w = np.linalg.eigvalsh(op.dense(al))
            np.testing.assert_array_equal(counts[i], [(w < e).sum() for e in eps])

    def test_square_counts(self, unit_square):
        m = DisorderModel(0, 1, master_seed=1)
        op = ShiftedOperator(unit_square, m, 1.0, 3)
        al = sample_disorder(m, op.sites, np.arange(2))
        w = np.linalg.eigvalsh(op.dense(al[1]))
        assert op.count_below(al, [1.0])[1, 0] == (w < 1.0).sum()

    def test_banded_matches_dense(self, unit_square):
        m = DisorderModel(0, 1, master_seed=1)
        op = ShiftedOperator(unit_square, m, 0.5, 2)
        al = sample_disorder(m, op.sites, 0)
        from scipy import linalg

        np.testing.assert_allclose(linalg.eigvals_banded(op.banded(al), lower=True),
                                   np.linalg.eigvalsh(op.dense(al)), atol=1e-10)


class TestIDS:
    def test_log_grid(self):
        g = log_grid(0.01, 1.0)
        assert len(g) == 33 and g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(1.0)

    def test_degenerate_equals_exact_count(self, unit_chain):
        m = DisorderModel(0.3, 0.3, coupling=2.0)
        eps = np.linspace(0, 6, 25)
        curve = ids_curve(unit_chain, m, 1.0, 10, 4, eps)
        op = ShiftedOperator(unit_chain, m, 1.0, 10)
        w = np.linalg.eigvalsh(op.dense(np.full(op.n, 0.3)))
        np.testing.assert_allclose(curve.ids, [(w <= e).mean() for e in eps], atol=1e-15)
        np.testing.assert_allclose(curve.half_width, 0.0, atol=1e-15)

    def test_saturates(self, unit_chain):
        curve = ids_curve(unit_chain, DisorderModel(0, 1), 1.0, 20, 10, [100.0])
        assert curve.ids[0] == 1.0

    def test_monotone_and_strict(self, unit_chain):
        eps = log_grid(0.05, 2.0, 8)
        curve = ids_curve(unit_chain, DisorderModel(0, 1, master_seed=5), 1.0, 200, 200, eps)
        assert np.all(np.diff(curve.ids) >= 0)
        assert curve.min_eigenvalue >= -1e-8
        pos = curve.ids > 0
        # N(eps / 2) < N(eps) once positive: compare grid points one octave apart
        half = ids_curve(unit_chain, DisorderModel(0, 1, master_seed=5), 1.0, 200, 200, eps[pos] / 2)
        assert np.all(half.ids < curve.ids[pos])

    def test_thread_independent(self, unit_chain):
        m = DisorderModel(0, 1, master_seed=9)
        a = ids_curve(unit_chain, m, 1.0, 30, 150, [0.2, 0.5], threads=1)
        b = ids_curve(unit_chain, m, 1.0, 30, 150, [0.2, 0.5], threads=3)
        np.testing.assert_array_equal(a.ids, b.ids)


class TestLifshitzFit:
    def test_synthetic_half(self):
        eps = log_grid(0.01, 0.2)
        fit = lifshitz_fit((eps, np.exp(-(eps**-0.5))))
        assert abs(fit.slope + 0.5) < 1e-10

    @given(st.floats(0.1, 3.0), st.floats(0.1, 10.0))
    def test_synthetic_general(self, eta, scale):
        eps = log_grid(0.01, 0.2)
        assume(scale * 0.01**-eta < 700)  # keep N(eps) out of the subnormal range
        fit = lifshitz_fit((eps, np.exp(-scale * eps**-eta)))
        assert fit.slope == pytest.approx(-eta, abs=1e-9)

    def test_range_and_drops(self):
        eps = log_grid(0.001, 1.0)
        ids = np.exp(-(eps**-0.5))
        ids[eps < 0.003] = 0.0
        fit = lifshitz_fit((eps, ids), (0.001, 0.5))
        assert fit.dropped and max(fit.dropped) < 0.003
        assert fit.slope == pytest.approx(-0.5, abs=1e-10)

    def test_square_lattice_slope_nearer_minus_one(self, unit_square):
        eps = log_grid(0.01, 0.2)
        model = DisorderModel(0, 1, coupling=0.2, master_seed=11)
        fit = lifshitz_fit(ids_curve(unit_square, model, 1.0, 20, 50, eps), (0.01, 0.2))
        assert abs(fit.slope + 1) < abs(fit.slope + 0.5), f"slope {fit.slope:.3f}"

    def test_too_few_points(self):
        with pytest.raises(InsufficientData):
            lifshitz_fit(([0.1, 0.2, 0.3], [0.0, 0.0, 0.1]))


class TestProbabilityBound:
    def test_negative_eps(self, unit_chain):
        pb = probability_bound_check(unit_chain, DisorderModel(0, 1), 1.0, -0.01, [3, 6], 50)
        assert np.all(pb.p_hat == 0)

    def test_huge_eps(self, unit_chain):
        pb = probability_bound_check(unit_chain, DisorderModel(0, 1), 1.0, 1e3, [3, 6], 50)
        assert np.all(pb.p_hat == 1) and np.all(pb.bound_rhs >= 1)

    def test_moderate_eps_ratio_stable(self, unit_chain):
        m = DisorderModel(0, 1, coupling=1.0, master_seed=2)
        pb = probability_bound_check(unit_chain, m, 1.0, 0.4, [5, 10, 20, 40], 400,
                                     reference_radius=200, reference_samples=400)
        assert np.all(pb.ratio <= 2.0)
        assert pb.ratio.max() / pb.ratio.min() <= 2.5
        # nested boxes: the event can only grow with the radius
        assert np.all(np.diff(pb.p_hat) >= -3 * pb.standard_error[1:])
        rows = list(pb.rows())
        assert rows[0][0] == 5


class TestCombesThomas:
    def gapped(self, unit_chain, gap):
        m = DisorderModel(0.5, 0.5, coupling=1.0)
        shift = ShiftedOperator(unit_chain, m, 1.0, 20).shift - gap
        return m, shift

    @pytest.mark.parametrize("gap", [0.2, 1.0, 3.0])
    def test_deterministic_against_direct_inverse(self, unit_chain, gap):
        m, shift = self.gapped(unit_chain, gap)
        rep = combes_thomas_check(unit_chain, m, 1.0, 20, 2, 0.0, shift=shift)
        op = ShiftedOperator(unit_chain, m, 1.0, 20, shift=shift)
        G = np.abs(np.linalg.inv(op.dense(np.full(op.n, 0.5))))
        k = np.abs(np.subtract.outer(np.arange(op.n), np.arange(op.n)))
        env = np.array([G[k == d].max() for d in range(op.n)])
        np.testing.assert_allclose(rep.max_abs_entry, env, rtol=1e-10)
        assert rep.rate == pytest.approx(-linregress(np.arange(op.n), np.log(env)).slope, rel=1e-10)
        # infinite-chain rate acosh(d / 2b)
        d, b = op.diagonal(np.full(op.n, 0.5))[0], op.hop.b[0]
        assert rep.rate == pytest.approx(math.acosh(abs(d) / (2 * abs(b))), rel=0.03)
        assert rep.max_abs_entry[0] <= 1 / gap

    def test_diagonal_bounded_by_inverse_gap(self, unit_chain):
        m = DisorderModel(0, 1, coupling=1.0, master_seed=4)
        rep = combes_thomas_check(unit_chain, m, 1.0, 15, 200, 0.3)
        assert rep.kept > 0 and rep.kept + rep.discarded == 200
        assert rep.max_abs_entry[0] <= 1 / 0.3

    def test_rate_grows_with_gap(self, unit_chain):
        m, shift = self.gapped(unit_chain, 0.0)
        rates = [combes_thomas_check(unit_chain, m, 1.0, 20, 1, 0.0, shift=shift - g).rate
                 for g in (0.1, 0.5, 2.0)]
        assert rates[0] < rates[1] < rates[2]

    def test_no_kept_samples(self, unit_chain):
        with pytest.raises(ConditioningFailure):
            combes_thomas_check(unit_chain, DisorderModel(0, 1), 1.0, 5, 10, 100.0)
