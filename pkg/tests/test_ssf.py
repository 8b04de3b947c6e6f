import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demandlab import ssf
from demandlab.core import (
    EmptyConditioningError,
    ExpThresholdLaplace,
    Gamma1D,
    GridDistribution,
    IndependentGrids,
    InversionDomainError,
    JointGrid,
    PointMass1D,
    Regime,
    ValidationError,
)

from conftest import gamma_grid


def exp_gamma(nu=1.0, alpha=1.0, lam=1.0):
    return ssf.SsfModel(ExpThresholdLaplace(Gamma1D(nu, alpha), lam))


class TestUtility:
    def test_single_atom(self):
        m = ssf.SsfModel(JointGrid([1.0], [10.0], [1.0]))
        assert ssf.utility(m, (1, 1)) == 2.0

    def test_exp_threshold_point_mass_zero(self):
        m = ssf.SsfModel(ExpThresholdLaplace(PointMass1D(0.0), 1.0))
        assert ssf.utility(m, (1, 0)) == pytest.approx(1 - math.exp(-1), abs=1e-15)

    def test_origin(self):
        for m in (exp_gamma(), ssf.SsfModel(JointGrid([1.0, 2.0], [3.0, 0.5], [0.5, 0.5]))):
            assert ssf.utility(m, (0, 0)) == 0.0

    def test_grid_matches_monte_carlo(self):
        rng = np.random.default_rng(0)
        a1, a2 = rng.gamma(2.0, 0.5, 400_000), rng.exponential(1.0, 400_000)
        vals = np.minimum(0.4 + a1 * 0.9, a2)
        m = exp_gamma(2.0, 2.0, 1.0)
        assert abs(ssf.utility(m, (0.4, 0.9)) - vals.mean()) < 4 * vals.std() / math.sqrt(vals.size)


class TestMrs:
    def test_point_mass_a1(self):
        m = ssf.SsfModel(JointGrid([2.5], [10.0], [1.0]))
        assert ssf.mrs(m, (1, 1)) == pytest.approx(1 / 2.5)

    def test_zero_x2_gamma(self):
        assert ssf.mrs(exp_gamma(), (0.7, 0.0)) == pytest.approx(1.0)

    def test_joint_two_atoms(self):
        m = ssf.SsfModel(JointGrid([1.0, 3.0], [5.0, 5.0], [0.5, 0.5]))
        assert ssf.mrs(m, (1, 1)) == pytest.approx(0.5)

    def test_empty_conditioning(self):
        m = ssf.SsfModel(JointGrid([1.0], [1.0], [1.0]))
        with pytest.raises(EmptyConditioningError):
            ssf.mrs(m, (5, 5))


class TestDemand:
    def test_interior(self):
        b, r = ssf.demand(exp_gamma(), (1, 1.5))
        np.testing.assert_allclose(b.as_tuple(), (1 / 3, 0.5), rtol=1e-14)
        assert r is Regime.INTERIOR

    def test_good1_corner(self):
        b, r = ssf.demand(exp_gamma(), (1, 0.5))
        assert (b.x1, b.x2, r) == (2.0, 0.0, Regime.ONLY_GOOD1)

    def test_good2_corner(self):
        b, r = ssf.demand(exp_gamma(), (0.5, 2))
        assert (b.x1, b.x2, r) == (0.0, 0.5, Regime.ONLY_GOOD2)

    def test_monte_carlo_first_order_condition(self):
        # E[(1 - p A1) 1{x1 + A1 x2 < A2}] vanishes at the closed-form demand
        rng = np.random.default_rng(1)
        y, p = 1.0, 1.5
        b, _ = ssf.demand(exp_gamma(), (y, p))
        a1, a2 = rng.gamma(1.0, 1.0, 2_000_000), rng.exponential(1.0, 2_000_000)
        vals = (1 - p * a1) * (b.x1 + a1 * b.x2 < a2)
        assert abs(vals.mean()) < 4 * vals.std() / math.sqrt(vals.size)

    def test_foc_monotone(self):
        for m in (exp_gamma(2, 1, 0.5), ssf.SsfModel(ExpThresholdLaplace(gamma_grid(1.5, 2.0), 2.0))):
            z = (3.0, 1.2)
            mesh = np.linspace(0, 3.0 / 1.2, 400)
            vals = np.array([ssf.foc_lhs(m, v, z) for v in mesh])
            assert np.all(np.diff(vals) <= 1e-15)

    def test_grid_a1_close_to_gamma(self):
        g = ssf.SsfModel(ExpThresholdLaplace(gamma_grid(2.0, 1.0), 0.5))
        b, r = ssf.demand(g, (5.0, 1.0))
        ref, rr = ssf.demand(exp_gamma(2.0, 1.0, 0.5), (5.0, 1.0))
        assert r is rr is Regime.INTERIOR
        assert b.x1 == pytest.approx(ref.x1, rel=1e-6)

    def test_point_mass_a1_corners(self):
        m = ssf.SsfModel(ExpThresholdLaplace(PointMass1D(2.0), 1.0))
        assert ssf.demand(m, (1, 0.5))[1] is Regime.ONLY_GOOD1
        assert ssf.demand(m, (1, 0.6))[1] is Regime.ONLY_GOOD2

    def test_joint_and_independent_grids_agree(self):
        rng = np.random.default_rng(2)
        a = np.sort(rng.lognormal(0, 0.7, 6))
        b = np.sort(rng.lognormal(0.5, 0.7, 5))
        wa, wb = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(5))
        ind = ssf.SsfModel(IndependentGrids(GridDistribution(a, wa), GridDistribution(b, wb)))
        aa, bb = np.meshgrid(a, b, indexing="ij")
        joint = ssf.SsfModel(JointGrid(aa.ravel(), bb.ravel(), np.outer(wa, wb).ravel()))
        y, p = rng.uniform(0.2, 5, 100), rng.uniform(0.2, 3, 100)
        x1i, _, ci = ssf.demand_arrays(ind, y, p)
        x1j, _, cj = ssf.demand_arrays(joint, y, p)
        np.testing.assert_allclose(x1i, x1j, atol=1e-11)
        np.testing.assert_array_equal(ci, cj)

    def test_joint_grid_convention(self):
        # the demanded x1 is the first point where the step function drops to <= 0
        rng = np.random.default_rng(3)
        m = ssf.SsfModel(JointGrid(rng.lognormal(0, 1, 8), rng.lognormal(1, 1, 8), rng.dirichlet(np.ones(8))))
        for y, p in rng.uniform(0.3, 4, (50, 2)):
            x1 = ssf.unconstrained_x1(m, (y, p))
            if not 0 < x1 < y / p:
                continue
            assert ssf.foc_lhs(m, x1 + 1e-9, (y, p)) <= 0
            assert ssf.foc_lhs(m, x1 - 1e-9, (y, p)) > 0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.2, 5), st.floats(0.2, 5), st.floats(0.2, 5), st.floats(0.05, 20), st.floats(0.05, 10))
    def test_regime_boundaries(self, nu, alpha, lam, y, p):
        _, r = ssf.demand(exp_gamma(nu, alpha, lam), (y, p))
        v = nu * p - alpha
        if v <= 0:
            assert r is Regime.ONLY_GOOD1
        elif y <= v / lam:
            assert r is Regime.ONLY_GOOD2
        else:
            assert r is Regime.INTERIOR

    def test_engel_slope(self):
        m = exp_gamma(2.0, 1.0, 0.7)
        x_a = ssf.demand(m, (6.0, 1.3))[0].x1
        x_b = ssf.demand(m, (6.5, 1.3))[0].x1
        assert (x_b - x_a) / 0.5 == pytest.approx(1 / 1.3, rel=1e-12)


class TestInverse:
    def test_gamma(self):
        v = ssf.inverse_log_laplace_derivative(Gamma1D(2.0, 1.0), -0.5)
        assert v == pytest.approx(3.0)

    def test_grid_round_trip(self):
        from demandlab import laplace

        g = gamma_grid(3.0, 2.0)
        v = ssf.inverse_log_laplace_derivative(g, -0.4)
        assert float(laplace.tilted_mean(g, v)) == pytest.approx(0.4, rel=1e-10)

    def test_outside_domain(self):
        with pytest.raises(InversionDomainError):
            ssf.inverse_log_laplace_derivative(Gamma1D(2.0, 1.0), -5.0)


class TestSlutsky:
    def test_examples(self):
        assert ssf.slutsky_coefficient(exp_gamma(1, 1, 1), (1, 2)) == pytest.approx(-0.5, abs=1e-6)
        assert ssf.slutsky_coefficient(exp_gamma(2, 1, 0.5), (5, 1)) == pytest.approx(-4.0, abs=1e-6)

    def test_formula_on_random_interior_designs(self):
        rng = np.random.default_rng(4)
        n = 0
        while n < 100:
            nu, alpha, lam = rng.uniform(0.3, 4, 3)
            y, p = rng.uniform(0.1, 20), rng.uniform(0.1, 10)
            m = exp_gamma(nu, alpha, lam)
            if ssf.demand(m, (y, p))[1] is not Regime.INTERIOR:
                continue
            n += 1
            assert ssf.slutsky_coefficient(m, (y, p)) == pytest.approx(-nu / (lam * p), abs=1e-4)

    def test_negative_for_grid_tastes(self):
        rng = np.random.default_rng(5)
        m = ssf.SsfModel(ExpThresholdLaplace(gamma_grid(1.7, 1.3), 0.8))
        for y, p in rng.uniform([1, 0.8], [15, 3], (30, 2)):
            if ssf.demand(m, (y, p))[1] is Regime.INTERIOR:
                assert ssf.slutsky_coefficient(m, (y, p)) < 0


class TestSaraIntersection:
    def test_point_mass(self):
        a, b = ssf.ssf_as_sara_check(GridDistribution.point_mass(1.0), (1, 1))
        assert a == pytest.approx(b, rel=1e-15)

    def test_two_atoms(self):
        a, b = ssf.ssf_as_sara_check(GridDistribution([0.5, 2.0], [0.5, 0.5]), (0.3, 0.7))
        assert a == pytest.approx(b, rel=1e-8)

    def test_randomized(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            k = rng.integers(1, 40)
            pi2 = GridDistribution(np.sort(rng.lognormal(0, 2, k)), rng.dirichlet(np.ones(k)))
            x = rng.uniform(0, 10, 2)
            a, b = ssf.ssf_as_sara_check(pi2, x)
            assert abs(a - b) <= 1e-6 * abs(b)


def test_rejects_sara_only_taste():
    from demandlab.core import GammaGamma

    with pytest.raises(ValidationError):
        ssf.SsfModel(GammaGamma(1, 1, 1, 1))
