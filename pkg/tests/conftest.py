import numpy as np
from scipy.special import gammainc, gammaln

from demandlab.core import GridDistribution, LogGrid


def gamma_grid(nu: float, alpha: float, grid: LogGrid = LogGrid()) -> GridDistribution:
    """Gamma(nu, rate alpha) on a log grid by the trapezoid rule in log a
    (weight_j proportional to density(a_j) * a_j); the mass below and above
    the grid goes to the end atoms."""
    a = grid.atoms()
    logw = nu * np.log(alpha * a) - alpha * a - gammaln(nu)
    w = np.exp(logw - logw.max())
    lo = gammainc(nu, alpha * a[0])
    hi = 1.0 - gammainc(nu, alpha * a[-1])
    w = w / w.sum() * (1.0 - lo - hi)
    w[0] += lo
    w[-1] += hi
    keep = w > 0
    return GridDistribution(a[keep], w[keep])
