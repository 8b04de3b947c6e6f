import numpy as np
import pytest

from demandlab import laplace
from demandlab.core import Gamma1D, GridDistribution, LogNormal1D, PointMass1D

from conftest import gamma_grid


class TestTiltedMoments:
    @pytest.mark.parametrize("spec", [Gamma1D(2.0, 1.5), LogNormal1D(-0.3, 0.8), GridDistribution([0.5, 3.0], [0.4, 0.6])])
    def test_derivatives_of_log_transform(self, spec):
        # phi = -d log Psi, V = d phi / dx (negated), by central differences
        x = np.array([0.2, 1.0, 3.0])
        h = 1e-5
        phi, var = laplace.tilted_moments(spec, x)
        dlog = (laplace.log_laplace(spec, x + h) - laplace.log_laplace(spec, x - h)) / (2 * h)
        np.testing.assert_allclose(phi, -dlog, rtol=1e-7)
        dphi = (laplace.tilted_mean(spec, x + h) - laplace.tilted_mean(spec, x - h)) / (2 * h)
        np.testing.assert_allclose(var, -dphi, rtol=1e-5)

    def test_grid_matches_gamma(self):
        g = gamma_grid(2.0, 1.0)
        x = np.array([0.0, 0.5, 2.0])
        np.testing.assert_allclose(laplace.log_laplace(g, x), laplace.log_laplace(Gamma1D(2.0, 1.0), x), atol=1e-4)

    def test_extreme_atoms_stay_finite(self):
        g = GridDistribution([np.exp(-10), np.exp(10)], [0.5, 0.5])
        phi, var = laplace.tilted_moments(g, np.array([0.0, 1.0, 100.0]))
        assert np.all(np.isfinite(phi)) and np.all(np.isfinite(var))
        assert phi[-1] == pytest.approx(np.exp(-10), rel=1e-12)

    def test_point_mass(self):
        phi, var = laplace.tilted_moments(PointMass1D(3.0), np.array([0.0, 5.0]))
        np.testing.assert_array_equal(phi, [3.0, 3.0])
        np.testing.assert_array_equal(var, [0.0, 0.0])

    def test_powered_marginal_scales(self):
        base = GridDistribution([0.5, 3.0], [0.5, 0.5])
        p = laplace.PoweredMarginal(base, 2.5)
        x = np.array([0.3, 1.7])
        np.testing.assert_allclose(laplace.log_laplace(p, x), 2.5 * laplace.log_laplace(base, x))
        np.testing.assert_allclose(laplace.tilted_mean(p, x), 2.5 * laplace.tilted_mean(base, x))

    def test_risk_aversion_definition(self):
        g = GridDistribution([0.5, 1.0, 3.0], [0.2, 0.3, 0.5])
        x = 0.7
        e = np.exp(-g.atoms * x)
        ref = (g.weights @ (g.atoms**2 * e)) / (g.weights @ (g.atoms * e))
        assert float(laplace.risk_aversion(g, x)) == pytest.approx(ref, rel=1e-13)
