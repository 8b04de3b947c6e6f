"""Stochastic safety-first (SSF) preferences.

Utility is U(x) = E[min{x1 + A1 x2, A2}]: the consumer values good 2 at
relative rate A1 up to a random intake limit A2. Along the budget line
x2 = y - p x1 the derivative of U is

    LHS(x1) = E[(1 - p A1) 1{x1 + A1 x2 < A2}],

which is non-increasing in x1. Demand is the point where it changes sign,
clamped to the budget segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import laplace
from .core import (
    Bundle,
    Design,
    DivisionGuardError,
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
from .numerics import MAX_DOUBLINGS, bisect_decreasing
from .sara import SaraModel, _as_bundle, _as_design
from .sara import mrs as sara_mrs

@dataclass(frozen=True)
class SsfModel:
    """SSF preferences: exponential threshold, joint grid, or independent grids."""

    taste: object

    def __post_init__(self) -> None:
        if not isinstance(self.taste, (ExpThresholdLaplace, JointGrid, IndependentGrids)):
            raise ValidationError(f"{type(self.taste).__name__} is not an SSF taste specification")


# ---------------------------------------------------------------------------
# Utility and MRS
# ---------------------------------------------------------------------------


def _expected_min(pi2: GridDistribution, s: NDArray[np.float64]) -> NDArray[np.float64]:
    """E[min{s, A2}] for A2 on a grid, vectorized in s."""
    a, w = pi2.atoms, pi2.weights
    partial = np.concatenate(([0.0], np.cumsum(w * a)))
    below = np.concatenate(([0.0], np.cumsum(w)))
    k = np.searchsorted(a, s, side="left")  # atoms strictly below s
    return partial[k] + s * (below[-1] - below[k])


def _survival(pi2: GridDistribution, s: NDArray[np.float64]) -> NDArray[np.float64]:
    """P(A2 > s) for A2 on a grid."""
    below = np.concatenate(([0.0], np.cumsum(pi2.weights)))
    k = np.searchsorted(pi2.atoms, s, side="right")
    return below[-1] - below[k]


def utility(m: SsfModel, x) -> float:
    """E[min{x1 + A1 x2, A2}]."""
    x = _as_bundle(x)
    t = m.taste
    if isinstance(t, JointGrid):
        return float(t.weights @ np.minimum(x.x1 + t.a1 * x.x2, t.a2))
    if isinstance(t, ExpThresholdLaplace):
        log_tail = -t.lam * x.x1 + float(laplace.log_laplace(t.a1, t.lam * x.x2))
        return float(-math.expm1(log_tail) / t.lam)
    s = x.x1 + t.pi1.atoms * x.x2
    return float(t.pi1.weights @ _expected_min(t.pi2, s))


def mrs(m: SsfModel, x) -> float:
    """1 / E[A1 | x1 + A1 x2 < A2]."""
    x = _as_bundle(x)
    t = m.taste
    if isinstance(t, JointGrid):
        surv = (x.x1 + t.a1 * x.x2 - t.a2) < 0
        prob = float(t.weights @ surv)
        mass_a1 = float((t.weights * t.a1) @ surv)
    elif isinstance(t, IndependentGrids):
        s = _survival(t.pi2, x.x1 + t.pi1.atoms * x.x2)
        prob = float(t.pi1.weights @ s)
        mass_a1 = float((t.pi1.weights * t.pi1.atoms) @ s)
    elif isinstance(t.a1, GridDistribution):
        # survival probabilities exp(-lam (x1 + a x2)) summed directly
        s = np.exp(-t.lam * (x.x1 + t.a1.atoms * x.x2))
        prob = float(t.a1.weights @ s)
        mass_a1 = float((t.a1.weights * t.a1.atoms) @ s)
    elif isinstance(t.a1, Gamma1D):
        return (t.a1.alpha + t.lam * x.x2) / t.a1.nu
    else:
        phi = float(laplace.tilted_mean(t.a1, t.lam * x.x2))
        if not phi > 0:
            raise DivisionGuardError("conditional mean of A1 vanished")
        return 1.0 / phi
    if not prob > 0:
        raise EmptyConditioningError(f"no taste atom survives at x={x.as_tuple()}")
    if not mass_a1 > 0:
        raise DivisionGuardError("conditional mean of A1 vanished")
    return prob / mass_a1


# ---------------------------------------------------------------------------
# Demand
# ---------------------------------------------------------------------------


def inverse_log_laplace_derivative(spec, xi: float) -> float:
    """v >= 0 with d log Psi / dv (v) = xi for the law of A1.

    d log Psi / dv = -phi(v) is increasing from -E[A1] towards -ess inf A1;
    targets outside that range raise InversionDomainError.
    """
    if isinstance(spec, Gamma1D):
        v = -(spec.nu / xi + spec.alpha)
        if not (xi < 0 and v >= 0):
            raise InversionDomainError(f"{xi} outside [-nu/alpha, 0)")
        return v
    target = -xi
    mean = float(laplace.tilted_mean(spec, 0.0))
    floor = laplace.essential_infimum(spec)
    if not (floor < target <= mean):
        raise InversionDomainError(f"{xi} outside (-{mean}, -{floor})")

    def f(v: float) -> float:
        return float(laplace.tilted_mean(spec, v)) - target

    hi = 1.0
    for _ in range(MAX_DOUBLINGS):
        if f(hi) <= 0:
            break
        hi *= 2.0
    else:
        raise InversionDomainError("target not bracketed")
    return bisect_decreasing(f, 0.0, hi, xtol=1e-14)


def _clamp(y: float, p: float, x1_star: float) -> tuple[Bundle, Regime]:
    ymax = y / p
    if x1_star <= 0:
        return Bundle(0.0, y), Regime.ONLY_GOOD2
    if x1_star >= ymax:
        return Bundle(ymax, 0.0), Regime.ONLY_GOOD1
    x2 = y - p * x1_star
    if x2 <= 0:
        return Bundle(ymax, 0.0), Regime.ONLY_GOOD1
    return Bundle(x1_star, x2), Regime.INTERIOR


def _exp_threshold_x1(t: ExpThresholdLaplace, y: float, p: float) -> float:
    """Unconstrained X1* = (y - v*/lam)/p with phi(v*) = 1/p; infinities
    encode the corners when the inversion has no root."""
    a1 = t.a1
    if isinstance(a1, Gamma1D):
        v = a1.nu * p - a1.alpha
    elif isinstance(a1, PointMass1D):
        # phi is constant: good 1 wins whenever its price per unit taste is lower
        return math.inf if 1.0 / p >= a1.a else -math.inf
    else:
        mean = float(laplace.tilted_mean(a1, 0.0))
        if 1.0 / p >= mean:
            return math.inf
        if 1.0 / p <= laplace.essential_infimum(a1):
            return -math.inf
        v = inverse_log_laplace_derivative(a1, -1.0 / p)
    return (y - v / t.lam) / p


def _joint_grid_x1(t: JointGrid, y: float, p: float) -> float:
    """Smallest x1 in [0, y/p] at which the step-function LHS is <= 0 just
    to its right; +inf when LHS stays positive on the whole segment."""
    d = 1.0 - p * t.a1
    c = t.a1 * y - t.a2  # survival iff d*x1 + c < 0
    w = t.weights
    on0 = (c < 0) | ((c == 0) & (d < 0))  # state just right of 0
    value = float(w @ (d * on0))
    if value <= 0:
        return 0.0
    moving = d != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(moving, -c / np.where(moving, d, 1.0), np.nan)
    ymax = y / p
    sel = moving & (b > 0) & (b < ymax)
    order = np.argsort(b[sel], kind="stable")
    bs = b[sel][order]
    # each crossing either removes a positive term or adds a negative one
    ds = d[sel][order]
    delta = -w[sel][order] * np.abs(ds)
    cum = value + np.cumsum(delta)
    # once no atom survives the sum is exactly zero; the running sum may not be
    alive = int(on0.sum()) - np.cumsum(np.sign(ds)).astype(int)
    hit = np.flatnonzero((cum <= 1e-14 * float(w @ np.abs(d))) | (alive == 0))
    return float(bs[hit[0]]) if hit.size else math.inf


def _independent_grid_lhs(t: IndependentGrids, x1: float, y: float, p: float) -> float:
    x2 = y - p * x1
    a1 = t.pi1.atoms
    s = _survival(t.pi2, x1 + a1 * x2)
    return float(t.pi1.weights @ ((1.0 - p * a1) * s))


def foc_lhs(m: SsfModel, x1: float, z) -> float:
    """E[(1 - p A1) 1{x1 + A1 x2 < A2}] on the budget line (up to a
    positive factor for the exponential threshold)."""
    z = _as_design(z)
    t = m.taste
    x2 = z.y - z.p * x1
    if isinstance(t, JointGrid):
        surv = (x1 + t.a1 * x2 - t.a2) < 0
        return float((t.weights * (1.0 - z.p * t.a1)) @ surv)
    if isinstance(t, IndependentGrids):
        return _independent_grid_lhs(t, x1, z.y, z.p)
    phi = float(laplace.tilted_mean(t.a1, t.lam * x2))
    log_scale = -t.lam * x1 + float(laplace.log_laplace(t.a1, t.lam * x2))
    return math.exp(log_scale) * (1.0 - z.p * phi)


def unconstrained_x1(m: SsfModel, z) -> float:
    """Sign-change point of the first-order condition before clamping."""
    z = _as_design(z)
    t = m.taste
    if isinstance(t, ExpThresholdLaplace):
        return _exp_threshold_x1(t, z.y, z.p)
    if isinstance(t, JointGrid):
        return _joint_grid_x1(t, z.y, z.p)
    ymax = z.y / z.p
    if _independent_grid_lhs(t, 0.0, z.y, z.p) <= 0:
        return 0.0
    if _independent_grid_lhs(t, ymax, z.y, z.p) > 0:
        return math.inf
    return bisect_decreasing(lambda v: _independent_grid_lhs(t, v, z.y, z.p), 0.0, ymax, xtol=1e-13)


def demand(m: SsfModel, z) -> tuple[Bundle, Regime]:
    """Clamped SSF demand and its regime."""
    z = _as_design(z)
    return _clamp(z.y, z.p, unconstrained_x1(m, z))


def demand_arrays(
    m: SsfModel, y: ArrayLike, p: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.int8]]:
    """Clamped demand for many designs (codes as in sara.demand_arrays)."""
    y, p = np.broadcast_arrays(np.atleast_1d(np.asarray(y, float)), np.atleast_1d(np.asarray(p, float)))
    t = m.taste
    if isinstance(t, IndependentGrids):
        x1 = _independent_grid_demand(t, y, p)
        x2 = np.where(x1 >= y / p, 0.0, np.maximum(y - p * x1, 0.0))
    else:
        out = [demand(m, Design(yy, pp))[0] for yy, pp in zip(y, p)]
        x1 = np.array([b.x1 for b in out])
        x2 = np.array([b.x2 for b in out])
    codes = ((x1 > 0).astype(np.int8) + 2 * (x2 > 0).astype(np.int8)).astype(np.int8)
    return x1, x2, codes


def _independent_grid_demand(t: IndependentGrids, y: NDArray, p: NDArray, xtol: float = 1e-13) -> NDArray:
    """Vectorized bisection on the step-function LHS for independent grids."""
    a1, w1 = t.pi1.atoms, t.pi1.weights
    cum2 = np.concatenate(([0.0], np.cumsum(t.pi2.weights)))
    total2 = cum2[-1]

    def lhs(x1):
        x2 = y - p * x1
        s = x1[:, None] + a1[None, :] * x2[:, None]
        surv = total2 - cum2[np.searchsorted(t.pi2.atoms, s, side="right")]
        return ((1.0 - p[:, None] * a1[None, :]) * surv) @ w1

    ymax = y / p
    lo = np.zeros_like(y)
    hi = ymax.copy()
    f0 = lhs(lo)
    fmax = lhs(hi)
    for _ in range(200):
        if np.all(hi - lo <= xtol + 4e-16 * hi):
            break
        mid = 0.5 * (lo + hi)
        pos = lhs(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    x1 = 0.5 * (lo + hi)
    x1 = np.where(f0 <= 0, 0.0, np.where(fmax > 0, ymax, x1))
    return x1


# ---------------------------------------------------------------------------
# Slutsky coefficient and the SARA intersection
# ---------------------------------------------------------------------------


def slutsky_coefficient(m: SsfModel, z, rel_step: float = 1e-5) -> float:
    """dX1/dp + X1 dX1/dy by central differences.

    X1 is the root of the first-order condition before clamping, which is
    the demanded quantity throughout the interior region and extends
    smoothly onto its boundary.
    """
    z = _as_design(z)

    def x1_at(y: float, p: float) -> float:
        x1 = unconstrained_x1(m, Design(y, p))
        if not math.isfinite(x1):
            raise ValidationError(f"first-order condition has no root at ({y}, {p})")
        return x1

    hy, hp = rel_step * z.y, rel_step * z.p
    x1 = x1_at(z.y, z.p)
    dp = (x1_at(z.y, z.p + hp) - x1_at(z.y, z.p - hp)) / (2.0 * hp)
    dy = (x1_at(z.y + hy, z.p) - x1_at(z.y - hy, z.p)) / (2.0 * hy)
    return dp + x1 * dy


def ssf_as_sara_check(pi2: GridDistribution, x) -> tuple[float, float]:
    """MRS of the SSF model with A2 ~ Exp(1), A1 ~ pi2 and of the SARA
    model with B1 = 1, B2 ~ pi2. The two models order bundles identically."""
    x = _as_bundle(x)
    ssf_model = SsfModel(ExpThresholdLaplace(pi2, 1.0))
    sara_model = SaraModel(IndependentGrids(GridDistribution.point_mass(1.0), pi2))
    return mrs(ssf_model, x), sara_mrs(sara_model, x)
