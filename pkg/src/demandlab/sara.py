"""Stochastic absolute risk aversion (SARA) preferences.

Utility is U(x) = -E[exp(-A'x)] over a random taste pair A. With
A = (Ac + B1, Ac + B2) for independent Ac, B1, B2 (Ac absent in the
independent case) every quantity reduces to one-dimensional Laplace
transforms, and the marginal rate of substitution is

    MRS(x) = (phi_c(x1 + x2) + phi_1(x1)) / (phi_c(x1 + x2) + phi_2(x2))

with phi the tilted means. Along the budget line the first-order condition
h(x1) = MRS numerator - p * denominator is strictly decreasing in x1, so the
clamped demand follows from the signs of h at 0 and y/p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import laplace
from .core import (
    REGIME_CODES,
    Bundle,
    CommonComponent,
    Design,
    DivisionGuardError,
    Gamma1D,
    GammaGamma,
    IndependentGrids,
    IndependentMarginals,
    LogNormal1D,
    LogNormalPair,
    OverflowGuardError,
    PointMass,
    PointMass1D,
    Regime,
    UnattainableLevelError,
    ValidationError,
)
from .numerics import MAX_DOUBLINGS, bisect_decreasing, expanding_bisect_decreasing, newton_bisect_decreasing

SARA_TASTES = (PointMass, GammaGamma, LogNormalPair, IndependentGrids, IndependentMarginals, CommonComponent)


@dataclass(frozen=True)
class SaraModel:
    """SARA preferences for a given taste specification."""

    taste: object
    common: Optional[object] = field(init=False, repr=False)
    first: object = field(init=False, repr=False)
    second: object = field(init=False, repr=False)
    proportional_ratio: Optional[float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        t = self.taste
        if isinstance(t, GammaGamma):
            parts = (None, Gamma1D(t.nu1, t.alpha1), Gamma1D(t.nu2, t.alpha2))
        elif isinstance(t, LogNormalPair):
            parts = (None, LogNormal1D(t.mu1, t.sigma1), LogNormal1D(t.mu2, t.sigma2))
        elif isinstance(t, IndependentGrids):
            parts = (None, t.pi1, t.pi2)
        elif isinstance(t, IndependentMarginals):
            parts = (None, t.first, t.second)
        elif isinstance(t, CommonComponent):
            parts = (t.common, t.first, t.second)
        elif isinstance(t, PointMass):
            parts = (None, PointMass1D(t.a1), PointMass1D(t.a2))
        else:
            raise ValidationError(f"{type(t).__name__} is not a SARA taste specification")
        common, first, second = parts
        object.__setattr__(self, "common", common)
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", second)
        object.__setattr__(self, "proportional_ratio", _proportional_ratio(common, first, second))

    @property
    def is_gamma(self) -> bool:
        return isinstance(self.taste, GammaGamma)


def _proportional_ratio(common, first, second) -> Optional[float]:
    """a1/a2 when every joint atom lies on one ray through the origin.

    A single joint atom is the risk-neutral limit and is allowed; several
    atoms on one ray give a degenerate (non-strictly concave) utility and are
    rejected.
    """
    b1 = laplace.is_degenerate(first)
    b2 = laplace.is_degenerate(second)
    if b1 is None or b2 is None:
        return None
    if common is None:
        if b2 == 0:
            raise ValidationError("taste for good 2 is identically zero")
        return b1 / b2
    c = laplace.is_degenerate(common)
    if c is not None:
        if c + b2 == 0:
            raise ValidationError("taste for good 2 is identically zero")
        return (c + b1) / (c + b2)
    if b1 == b2:
        raise ValidationError("mixture of proportional point masses has no unique demand")
    return None


def _as_bundle(x) -> Bundle:
    return x if isinstance(x, Bundle) else Bundle(*x)


def _as_design(z) -> Design:
    return z if isinstance(z, Design) else Design(*z)


# ---------------------------------------------------------------------------
# Utility, MRS, risk aversion
# ---------------------------------------------------------------------------


def log_disutility(m: SaraModel, x1: ArrayLike, x2: ArrayLike) -> NDArray[np.float64]:
    """log(-U(x)), vectorized."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    out = laplace.log_laplace(m.first, x1) + laplace.log_laplace(m.second, x2)
    if m.common is not None:
        out = out + laplace.log_laplace(m.common, x1 + x2)
    return out


def utility(m: SaraModel, x) -> float:
    """-E[exp(-A'x)], strictly negative."""
    x = _as_bundle(x)
    if m.is_gamma:
        t = m.taste
        val = -((t.alpha1 / (t.alpha1 + x.x1)) ** t.nu1) * ((t.alpha2 / (t.alpha2 + x.x2)) ** t.nu2)
    else:
        val = -math.exp(float(log_disutility(m, x.x1, x.x2)))
    if not (val < 0 and math.isfinite(val)):
        raise OverflowGuardError(f"utility at {x.as_tuple()} is outside the representable range")
    return val


def _mrs_parts(m: SaraModel, x1, x2):
    phi1, v1 = laplace.tilted_moments(m.first, x1)
    phi2, v2 = laplace.tilted_moments(m.second, x2)
    if m.common is None:
        zero = np.zeros_like(phi1)
        return phi1, phi2, v1, v2, zero
    phic, vc = laplace.tilted_moments(m.common, np.asarray(x1) + np.asarray(x2))
    return phic + phi1, phic + phi2, v1, v2, vc


def mrs_array(m: SaraModel, x1: ArrayLike, x2: ArrayLike) -> NDArray[np.float64]:
    """Vectorized marginal rate of substitution."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if m.is_gamma:
        t = m.taste
        return (t.nu1 / t.nu2) * (t.alpha2 + x2) / (t.alpha1 + x1)
    num, den, *_ = _mrs_parts(m, x1, x2)
    if np.any(~(den > 0)) or not np.all(np.isfinite(num)):
        raise DivisionGuardError("MRS denominator vanished")
    return num / den


def mrs(m: SaraModel, x) -> float:
    """E[A1 exp(-A'x)] / E[A2 exp(-A'x)]."""
    x = _as_bundle(x)
    return float(mrs_array(m, x.x1, x.x2))


def absolute_risk_aversion_good1(m: SaraModel, x1: float) -> float:
    """-U1''/U1' = E[A1^2 e^{-A1 x1}] / E[A1 e^{-A1 x1}] for independent marginals."""
    if m.common is not None:
        raise ValidationError("risk aversion for good 1 alone requires independent marginals")
    if isinstance(m.first, Gamma1D):
        return (m.first.nu + 1.0) / (m.first.alpha + float(x1))
    return float(laplace.risk_aversion(m.first, float(x1)))


# ---------------------------------------------------------------------------
# Indifference curves
# ---------------------------------------------------------------------------


def indifference_curve(m: SaraModel, x1: float, u: float) -> float:
    """x2 >= 0 with U(x1, x2) = u."""
    x1 = float(x1)
    if not u < 0:
        raise UnattainableLevelError("utility levels are strictly negative")
    u0 = utility(m, (x1, 0.0))
    if u < u0:
        raise UnattainableLevelError(f"level {u} is below U(x1, 0) = {u0}")
    if u == u0:
        return 0.0
    if m.is_gamma:
        t = m.taste
        inner = (-1.0 / u) * (t.alpha1 / (t.alpha1 + x1)) ** t.nu1
        return max(t.alpha2 * (inner ** (1.0 / t.nu2) - 1.0), 0.0)
    target = math.log(-u)

    def f(x2: float) -> float:
        return float(log_disutility(m, x1, x2)) - target

    hi = 1.0
    for _ in range(MAX_DOUBLINGS):
        if f(hi) <= 0:
            break
        hi *= 2.0
    else:
        raise UnattainableLevelError(f"level {u} is not reached for any finite x2")
    return bisect_decreasing(f, 0.0, hi, xtol=1e-15)


# ---------------------------------------------------------------------------
# Demand
# ---------------------------------------------------------------------------


def gamma_regime_region(nu1: float, alpha1: float, nu2: float, alpha2: float, z) -> Regime:
    """Regime implied by the gamma closed form: Interior iff both
    nu1*y - p*nu2*alpha1 + nu1*alpha2 and nu2*y + p*nu2*alpha1 - nu1*alpha2
    are positive; otherwise the corner whose term is non-positive."""
    z = _as_design(z)
    t1 = nu1 * z.y - z.p * nu2 * alpha1 + nu1 * alpha2
    t2 = nu2 * z.y + z.p * nu2 * alpha1 - nu1 * alpha2
    if t1 <= 0:
        return Regime.ONLY_GOOD2
    if t2 <= 0:
        return Regime.ONLY_GOOD1
    return Regime.INTERIOR


def gamma_unconstrained_x1(t: GammaGamma, y: ArrayLike, p: ArrayLike) -> NDArray[np.float64]:
    """Root of the gamma first-order condition ignoring non-negativity."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    return (t.nu1 * y + t.nu1 * t.alpha2 - p * t.nu2 * t.alpha1) / (p * (t.nu1 + t.nu2))


def foc_lhs(m: SaraModel, x1: ArrayLike, y: ArrayLike, p: ArrayLike) -> NDArray[np.float64]:
    """h(x1) = E[A1 e^{-A'x}] / Psi - p E[A2 e^{-A'x}] / Psi on the budget line."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(y, dtype=float) - np.asarray(p, dtype=float) * x1
    num, den, *_ = _mrs_parts(m, x1, x2)
    return num - np.asarray(p) * den


def _foc_with_slope(m: SaraModel, x1, y, p):
    x2 = y - p * x1
    num, den, v1, v2, vc = _mrs_parts(m, x1, x2)
    h = num - p * den
    dh = -v1 - p * p * v2 - (1.0 - p) ** 2 * vc
    return h, dh


def _corner_codes(x1: NDArray[np.float64], x2: NDArray[np.float64]) -> NDArray[np.int8]:
    return ((x1 > 0).astype(np.int8) + 2 * (x2 > 0).astype(np.int8)).astype(np.int8)


def demand_arrays(
    m: SaraModel, y: ArrayLike, p: ArrayLike, xtol: float = 1e-13
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.int8]]:
    """Clamped demand for many designs.

    Returns x1, x2 and regime codes (0 BothZero, 1 OnlyGood1, 2 OnlyGood2,
    3 Interior). The budget p*x1 + x2 = y holds with x2 = y - p*x1.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    y, p = np.broadcast_arrays(y, p)
    y = y.astype(float).copy()
    p = p.astype(float).copy()
    if np.any(~(y > 0)) or np.any(~(p > 0)):
        raise ValidationError("designs must be strictly positive")
    x1 = np.zeros_like(y)
    ymax = y / p

    if m.proportional_ratio is not None:
        # linear indifference curves: buy only the cheaper good per unit taste
        good1 = p <= m.proportional_ratio
        x1 = np.where(good1, ymax, 0.0)
    elif m.is_gamma:
        t = m.taste
        t1 = t.nu1 * y - p * t.nu2 * t.alpha1 + t.nu1 * t.alpha2
        t2 = t.nu2 * y + p * t.nu2 * t.alpha1 - t.nu1 * t.alpha2
        x1 = np.where(t1 <= 0, 0.0, np.where(t2 <= 0, ymax, t1 / (p * (t.nu1 + t.nu2))))
    else:
        h0 = foc_lhs(m, np.zeros_like(y), y, p)
        hmax = foc_lhs(m, ymax, y, p)
        only2 = h0 <= 0
        only1 = ~only2 & (hmax >= 0)
        x1 = np.where(only1, ymax, 0.0)
        inner = ~(only1 | only2)
        if inner.any():
            yi, pi_ = y[inner], p[inner]

            def fdf(x, rows):
                return _foc_with_slope(m, x, yi[rows], pi_[rows])

            x1[inner] = newton_bisect_decreasing(fdf, np.zeros_like(yi), ymax[inner], xtol=xtol)
    x1 = np.clip(x1, 0.0, ymax)
    x2 = np.where(x1 >= ymax, 0.0, np.maximum(y - p * x1, 0.0))
    return x1, x2, _corner_codes(x1, x2)


def demand(m: SaraModel, z) -> tuple[Bundle, Regime]:
    """Utility-maximizing bundle on the budget set and its regime."""
    z = _as_design(z)
    x1, x2, code = demand_arrays(m, z.y, z.p)
    return Bundle(float(x1[0]), float(x2[0])), REGIME_CODES[int(code[0])]


def unconstrained_x1(m: SaraModel, z) -> float:
    """Root of h on the whole real line by expanding-bracket bisection.

    Requires Laplace transforms that are finite at negative arguments
    (grids and point masses)."""
    z = _as_design(z)

    def f(x: float) -> float:
        return float(foc_lhs(m, x, z.y, z.p))

    return expanding_bisect_decreasing(f, 0.0, z.y / z.p)


# ---------------------------------------------------------------------------
# Many independent-grid models at once
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StackedGrids:
    """Several one-dimensional grids padded to a common length.

    Padding atoms carry log-weight -inf and so drop out of every sum.
    """

    atoms: NDArray[np.float64]
    logw: NDArray[np.float64]

    @classmethod
    def from_grids(cls, grids) -> "StackedGrids":
        L = max(len(g) for g in grids)
        atoms = np.ones((len(grids), L))
        logw = np.full((len(grids), L), -np.inf)
        with np.errstate(divide="ignore"):
            for i, g in enumerate(grids):
                atoms[i, : len(g)] = g.atoms
                logw[i, : len(g)] = np.log(g.weights)
        return cls(atoms, logw)

    def tilted_moments(self, rows: NDArray[np.intp], x: NDArray[np.float64]):
        a = self.atoms[rows]
        e = self.logw[rows] - x[:, None] * a
        e -= e.max(axis=1, keepdims=True)
        q = np.exp(e)
        s0 = q.sum(axis=1)
        qa = q * a
        phi = qa.sum(axis=1) / s0
        var = np.maximum(np.einsum("ij,ij->i", qa, a) / s0 - phi * phi, 0.0)
        return phi, var


def demand_stacked(
    first: StackedGrids,
    second: StackedGrids,
    rows: NDArray[np.intp],
    y: NDArray[np.float64],
    p: NDArray[np.float64],
    xtol: float = 1e-13,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.int8]]:
    """Clamped demand where design i faces the independent grids in row
    rows[i] of ``first`` and ``second``. Same conventions as demand_arrays."""
    rows = np.asarray(rows, dtype=np.intp)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    ymax = y / p

    def h(x1, sel):
        phi1, v1 = first.tilted_moments(rows[sel], x1)
        phi2, v2 = second.tilted_moments(rows[sel], y[sel] - p[sel] * x1)
        return phi1 - p[sel] * phi2, -v1 - p[sel] ** 2 * v2

    everything = np.arange(y.size)
    h0 = h(np.zeros_like(y), everything)[0]
    hmax = h(ymax, everything)[0]
    only2 = h0 <= 0
    only1 = ~only2 & (hmax >= 0)
    x1 = np.where(only1, ymax, 0.0)
    inner = np.flatnonzero(~(only1 | only2))
    if inner.size:
        def fdf(x, active):
            return h(x, inner[active])

        x1[inner] = newton_bisect_decreasing(fdf, np.zeros(inner.size), ymax[inner], xtol=xtol)
    x1 = np.clip(x1, 0.0, ymax)
    x2 = np.where(x1 >= ymax, 0.0, np.maximum(y - p * x1, 0.0))
    return x1, x2, _corner_codes(x1, x2)
