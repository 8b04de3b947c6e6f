"""Domain types shared across the package: bundles, designs, regimes,
taste specifications, panel records, and the error hierarchy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class DemandLabError(Exception):
    """Base class for all package errors."""


class ValidationError(DemandLabError, ValueError):
    """An input violates a type invariant."""


class OverflowGuardError(DemandLabError, ArithmeticError):
    """An expectation left the representable floating-point range."""


class DivisionGuardError(DemandLabError, ArithmeticError):
    """A ratio of expectations has a vanishing or non-finite denominator."""


class BracketError(DemandLabError, RuntimeError):
    """A monotone root could not be bracketed."""


class UnattainableLevelError(DemandLabError, ValueError):
    """No non-negative quantity reaches the requested utility level."""


class EmptyConditioningError(DemandLabError, ArithmeticError):
    """A conditioning event has zero probability."""


class InversionDomainError(DemandLabError, ValueError):
    """The target lies outside the range of the function being inverted."""


class SingularSystemError(DemandLabError, np.linalg.LinAlgError):
    """A projection system is numerically singular."""


class MaskingError(ValidationError):
    """A panel record violates the partial-observability rule."""


class PanelFormatError(DemandLabError, ValueError):
    """A panel file row cannot be parsed."""


class NoInteriorObservationsError(DemandLabError, ValueError):
    """A statistic requires interior observations but none are present."""


# ---------------------------------------------------------------------------
# Bundles, designs, regimes
# ---------------------------------------------------------------------------


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value}")
    return value


@dataclass(frozen=True)
class Bundle:
    """Quantities of the two goods."""

    x1: float
    x2: float

    def __post_init__(self) -> None:
        for name in ("x1", "x2"):
            v = _check_finite(name, getattr(self, name))
            if v < 0:
                raise ValidationError(f"{name} must be non-negative, got {v}")
            object.__setattr__(self, name, v)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x1, self.x2)


@dataclass(frozen=True)
class Design:
    """Normalized expenditure y and relative price p of good 1."""

    y: float
    p: float

    def __post_init__(self) -> None:
        for name in ("y", "p"):
            v = _check_finite(name, getattr(self, name))
            if v <= 0:
                raise ValidationError(f"{name} must be strictly positive, got {v}")
            object.__setattr__(self, name, v)


class Regime(str, Enum):
    BOTH_ZERO = "BothZero"
    ONLY_GOOD1 = "OnlyGood1"
    ONLY_GOOD2 = "OnlyGood2"
    INTERIOR = "Interior"


def classify_regime(x: Bundle) -> Regime:
    """Regime of a bundle. Corners come out of the demand clamp as exact
    zeros, so the comparison is exact."""
    if x.x1 > 0.0:
        return Regime.INTERIOR if x.x2 > 0.0 else Regime.ONLY_GOOD1
    return Regime.ONLY_GOOD2 if x.x2 > 0.0 else Regime.BOTH_ZERO


def classify_regimes(x1: ArrayLike, x2: ArrayLike) -> NDArray[np.int8]:
    """Vectorized regime codes: 0 BothZero, 1 OnlyGood1, 2 OnlyGood2, 3 Interior."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return ((x1 > 0).astype(np.int8) + 2 * (x2 > 0).astype(np.int8)).astype(np.int8)


REGIME_CODES = (Regime.BOTH_ZERO, Regime.ONLY_GOOD1, Regime.ONLY_GOOD2, Regime.INTERIOR)


# ---------------------------------------------------------------------------
# Discrete distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridDistribution:
    """Discrete distribution on strictly increasing positive atoms.

    Weights are stored as given; they may be negative while the filter is
    working on them. ``is_probability`` checks the valid-probability state.
    """

    atoms: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        atoms = np.array(self.atoms, dtype=float).reshape(-1)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if atoms.size == 0:
            raise ValidationError("grid must have at least one atom")
        if atoms.shape != weights.shape:
            raise ValidationError("atoms and weights must have equal length")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise ValidationError("atoms and weights must be finite")
        if np.any(atoms <= 0):
            raise ValidationError("atoms must be strictly positive")
        if np.any(np.diff(atoms) <= 0):
            raise ValidationError("atoms must be strictly increasing")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_atoms(cls, atoms: ArrayLike, weights: ArrayLike) -> "GridDistribution":
        """Sort atoms and merge duplicates, summing their weights."""
        atoms = np.asarray(atoms, dtype=float).reshape(-1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        uniq, inverse = np.unique(atoms, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inverse, weights)
        return cls(uniq, merged)

    @classmethod
    def point_mass(cls, atom: float) -> "GridDistribution":
        return cls(np.array([float(atom)]), np.array([1.0]))

    def __len__(self) -> int:
        return int(self.atoms.size)

    def is_probability(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.weights >= 0) and abs(self.weights.sum() - 1.0) <= tol)

    def support(self) -> NDArray[np.float64]:
        """Atoms carrying positive weight."""
        return self.atoms[self.weights > 0]

    def mean(self) -> float:
        return float(self.weights @ self.atoms / self.weights.sum())

    def cdf(self, t: ArrayLike) -> NDArray[np.float64]:
        """P(A <= t) for a probability-state grid."""
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(self.atoms, np.asarray(t, dtype=float), side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

    def to_json(self) -> dict:
        return {"atoms": [float(a) for a in self.atoms], "weights": [float(w) for w in self.weights]}

    @classmethod
    def from_json(cls, data: dict) -> "GridDistribution":
        try:
            return cls(np.asarray(data["atoms"], dtype=float), np.asarray(data["weights"], dtype=float))
        except KeyError as exc:
            raise ValidationError(f"grid JSON missing key {exc}") from exc


@dataclass(frozen=True)
class LogGrid:
    """count atoms log-spaced between exp(log_min) and exp(log_max)."""

    count: int = 500
    log_min: float = -10.0
    log_max: float = 10.0

    def __post_init__(self) -> None:
        if int(self.count) < 2 or not self.log_max > self.log_min:
            raise ValidationError("grid needs count >= 2 and log_max > log_min")
        object.__setattr__(self, "count", int(self.count))

    def atoms(self) -> NDArray[np.float64]:
        return np.exp(np.linspace(self.log_min, self.log_max, self.count))


def discretize(dist: GridDistribution, atoms: ArrayLike) -> NDArray[np.float64]:
    """Weights on ``atoms`` obtained by splitting each atom of ``dist``
    between its two neighbouring grid points, linearly in log scale. Mass
    outside the grid goes to the nearest end point."""
    grid = np.log(np.asarray(atoms, dtype=float))
    la = np.log(dist.atoms)
    k = np.clip(np.searchsorted(grid, la, side="right") - 1, 0, grid.size - 2)
    frac = np.clip((la - grid[k]) / (grid[k + 1] - grid[k]), 0.0, 1.0)
    out = np.zeros(grid.size)
    np.add.at(out, k, dist.weights * (1.0 - frac))
    np.add.at(out, k + 1, dist.weights * frac)
    return out


# ---------------------------------------------------------------------------
# One-dimensional taste laws
# ---------------------------------------------------------------------------


def _positive(obj: object, *names: str) -> None:
    for name in names:
        v = _check_finite(name, getattr(obj, name))
        if v <= 0:
            raise ValidationError(f"{name} must be strictly positive, got {v}")
        object.__setattr__(obj, name, v)


@dataclass(frozen=True)
class Gamma1D:
    """Gamma law with shape nu and rate alpha (mean nu/alpha)."""

    nu: float
    alpha: float

    def __post_init__(self) -> None:
        _positive(self, "nu", "alpha")


@dataclass(frozen=True)
class LogNormal1D:
    """Law of exp(mu + sigma * eps) with eps standard normal."""

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", _check_finite("mu", self.mu))
        _positive(self, "sigma")


@dataclass(frozen=True)
class PointMass1D:
    """Degenerate law at a non-negative atom."""

    a: float

    def __post_init__(self) -> None:
        v = _check_finite("a", self.a)
        if v < 0:
            raise ValidationError(f"atom must be non-negative, got {v}")
        object.__setattr__(self, "a", v)


Marginal = Union[Gamma1D, LogNormal1D, PointMass1D, GridDistribution]


# ---------------------------------------------------------------------------
# Joint taste specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    """Deterministic taste pair (risk-neutral limit when used in SARA)."""

    a1: float
    a2: float

    def __post_init__(self) -> None:
        _positive(self, "a1", "a2")


@dataclass(frozen=True)
class GammaGamma:
    """Independent gamma marginals, A_j ~ gamma(nu_j, alpha_j) with rate alpha_j."""

    nu1: float
    alpha1: float
    nu2: float
    alpha2: float

    def __post_init__(self) -> None:
        _positive(self, "nu1", "alpha1", "nu2", "alpha2")


@dataclass(frozen=True)
class LogNormalPair:
    """Independent log-normal marginals."""

    mu1: float
    sigma1: float
    mu2: float
    sigma2: float

    def __post_init__(self) -> None:
        for name in ("mu1", "mu2"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        _positive(self, "sigma1", "sigma2")


@dataclass(frozen=True)
class IndependentGrids:
    """Independent discrete marginals."""

    pi1: GridDistribution
    pi2: GridDistribution

    def __post_init__(self) -> None:
        for name in ("pi1", "pi2"):
            g = getattr(self, name)
            if not g.is_probability(1e-9):
                raise ValidationError(f"{name} must be a probability grid")


@dataclass(frozen=True)
class IndependentMarginals:
    """Independent marginals of any one-dimensional law."""

    first: Marginal
    second: Marginal


@dataclass(frozen=True)
class CommonComponent:
    """A = (Ac + B1, Ac + B2) with Ac, B1, B2 independent."""

    common: Marginal
    first: Marginal
    second: Marginal


@dataclass(frozen=True)
class ExpThresholdLaplace:
    """Safety-first taste with A2 ~ Exp(lam) independent of A1."""

    a1: Marginal
    lam: float

    def __post_init__(self) -> None:
        _positive(self, "lam")


@dataclass(frozen=True, eq=False)
class JointGrid:
    """Discrete joint law on (a1, a2) atom pairs."""

    a1: NDArray[np.float64]
    a2: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        a1 = np.array(self.a1, dtype=float).reshape(-1)
        a2 = np.array(self.a2, dtype=float).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not (a1.shape == a2.shape == w.shape) or a1.size == 0:
            raise ValidationError("joint grid arrays must be non-empty and of equal length")
        if np.any(a1 < 0) or np.any(a2 <= 0) or not np.all(np.isfinite(np.r_[a1, a2, w])):
            raise ValidationError("joint grid atoms must be finite with a1 >= 0, a2 > 0")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError("joint grid weights must be a probability vector")
        for arr in (a1, a2, w):
            arr.setflags(write=False)
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)
        object.__setattr__(self, "weights", w)


TasteSpec = Union[
    PointMass,
    GammaGamma,
    LogNormalPair,
    IndependentGrids,
    IndependentMarginals,
    CommonComponent,
    ExpThresholdLaplace,
    JointGrid,
]


# ---------------------------------------------------------------------------
# Panel records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PanelObservation:
    """One consumer-period record with regime-dependent observability."""

    segment_id: int
    consumer_id: int
    period: int
    x1: float
    x2: float
    y: Optional[float] = None
    p: Optional[float] = None

    def __post_init__(self) -> None:
        Bundle(self.x1, self.x2)  # validates quantities
        object.__setattr__(self, "x1", float(self.x1))
        object.__setattr__(self, "x2", float(self.x2))
        if self.period < 1:
            raise ValidationError("period must be >= 1")
        if (self.y is not None) != (self.x2 > 0):
            raise MaskingError("y must be present exactly when x2 > 0")
        if (self.p is not None) != (self.x1 > 0 and self.x2 > 0):
            raise MaskingError("p must be present exactly when x1 > 0 and x2 > 0")
        for name in ("y", "p"):
            v = getattr(self, name)
            if v is not None:
                v = _check_finite(name, v)
                if v <= 0:
                    raise ValidationError(f"{name} must be strictly positive")
                object.__setattr__(self, name, v)

    @property
    def regime(self) -> Regime:
        return classify_regime(Bundle(self.x1, self.x2))

    @property
    def bundle(self) -> Bundle:
        return Bundle(self.x1, self.x2)


def mask_observation(
    x: Bundle, z: Design, segment_id: int = 0, consumer_id: int = 0, period: int = 1
) -> PanelObservation:
    """Record a bundle with the design masked per partial observability:
    y is seen only when good 2 is bought, p only when both goods are."""
    y = z.y if x.x2 > 0 else None
    p = z.p if (x.x1 > 0 and x.x2 > 0) else None
    return PanelObservation(segment_id, consumer_id, period, x.x1, x.x2, y, p)
