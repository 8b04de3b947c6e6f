"""Laplace transforms of one-dimensional taste laws and their tilted moments.

For a non-negative random variable A and x >= 0 write
Psi(x) = E[exp(-A x)]. The tilted mean phi(x) = E[A e^{-Ax}] / Psi(x) equals
-d log Psi / dx, and the tilted variance V(x) = -d phi / dx. Grids are
evaluated with the largest exponent factored out so that atoms spanning
e^-10 .. e^10 stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import singledispatch
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .bayes import lognormal_log_moment
from .core import (
    DivisionGuardError,
    Gamma1D,
    GridDistribution,
    LogNormal1D,
    OverflowGuardError,
    PointMass1D,
    ValidationError,
)


@dataclass(frozen=True)
class PoweredMarginal:
    """Law whose Laplace transform is the nu-th power of the base transform."""

    base: object
    nu: float

    def __post_init__(self) -> None:
        if not self.nu > 0:
            raise ValidationError("nu must be positive")


Array = NDArray[np.float64]


@singledispatch
def log_laplace(spec, x: ArrayLike) -> Array:
    """log Psi(x) for the given one-dimensional law."""
    raise TypeError(f"unsupported taste law {type(spec).__name__}")


@singledispatch
def tilted_moments(spec, x: ArrayLike) -> tuple[Array, Array]:
    """(phi(x), V(x)): tilted mean and tilted variance."""
    raise TypeError(f"unsupported taste law {type(spec).__name__}")


def tilted_mean(spec, x: ArrayLike) -> Array:
    return tilted_moments(spec, x)[0]


# --- gamma -----------------------------------------------------------------


@log_laplace.register
def _(spec: Gamma1D, x: ArrayLike) -> Array:
    return -spec.nu * np.log1p(np.asarray(x, dtype=float) / spec.alpha)


@tilted_moments.register
def _(spec: Gamma1D, x: ArrayLike) -> tuple[Array, Array]:
    s = spec.alpha + np.asarray(x, dtype=float)
    return spec.nu / s, spec.nu / (s * s)


# --- point mass -------------------------------------------------------------


@log_laplace.register
def _(spec: PointMass1D, x: ArrayLike) -> Array:
    return -spec.a * np.asarray(x, dtype=float)


@tilted_moments.register
def _(spec: PointMass1D, x: ArrayLike) -> tuple[Array, Array]:
    x = np.asarray(x, dtype=float)
    return np.full(x.shape, spec.a), np.zeros(x.shape)


# --- log-normal -------------------------------------------------------------


@log_laplace.register
def _(spec: LogNormal1D, x: ArrayLike) -> Array:
    x = np.asarray(x, dtype=float)
    return lognormal_log_moment(spec.mu, spec.sigma, x.reshape(-1), 0).reshape(x.shape)


@tilted_moments.register
def _(spec: LogNormal1D, x: ArrayLike) -> tuple[Array, Array]:
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1)
    l0, l1, l2 = (lognormal_log_moment(spec.mu, spec.sigma, flat, k) for k in (0, 1, 2))
    phi = np.exp(l1 - l0)
    var = np.maximum(np.exp(l2 - l0) - phi * phi, 0.0)
    return phi.reshape(x.shape), var.reshape(x.shape)


# --- discrete grid ----------------------------------------------------------


def _grid_exponents(grid: GridDistribution, x: Array) -> tuple[Array, Array]:
    """Rows of log w_j - a_j x and their row maxima."""
    with np.errstate(divide="ignore"):
        logw = np.log(grid.weights)
    e = logw[None, :] - x.reshape(-1, 1) * grid.atoms[None, :]
    m = e.max(axis=1)
    if not np.all(np.isfinite(m)):
        raise OverflowGuardError("grid expectation left the exponent range")
    return e, m


@log_laplace.register
def _(spec: GridDistribution, x: ArrayLike) -> Array:
    x = np.asarray(x, dtype=float)
    e, m = _grid_exponents(spec, x)
    return (m + np.log(np.exp(e - m[:, None]).sum(axis=1))).reshape(x.shape)


@tilted_moments.register
def _(spec: GridDistribution, x: ArrayLike) -> tuple[Array, Array]:
    x = np.asarray(x, dtype=float)
    e, m = _grid_exponents(spec, x)
    q = np.exp(e - m[:, None])
    s0 = q.sum(axis=1)
    phi = (q @ spec.atoms) / s0
    var = np.maximum((q @ (spec.atoms * spec.atoms)) / s0 - phi * phi, 0.0)
    return phi.reshape(x.shape), var.reshape(x.shape)


# --- powered transform ------------------------------------------------------


@log_laplace.register
def _(spec: PoweredMarginal, x: ArrayLike) -> Array:
    return spec.nu * log_laplace(spec.base, x)


@tilted_moments.register
def _(spec: PoweredMarginal, x: ArrayLike) -> tuple[Array, Array]:
    phi, var = tilted_moments(spec.base, x)
    return spec.nu * phi, spec.nu * var


# --- derived quantities -----------------------------------------------------


def expectation(spec, x: ArrayLike) -> Array:
    """E[A] when x = 0, the plain mean."""
    return tilted_moments(spec, np.zeros_like(np.asarray(x, dtype=float)))[0]


def risk_aversion(spec, x: ArrayLike) -> Array:
    """E[A^2 e^{-Ax}] / E[A e^{-Ax}] = phi + V/phi."""
    phi, var = tilted_moments(spec, x)
    if np.any(~(phi > 0)) or not np.all(np.isfinite(phi)):
        raise DivisionGuardError("E[A exp(-A x)] vanished")
    return phi + var / phi


def essential_infimum(spec) -> float:
    """Lower end of the support."""
    if isinstance(spec, GridDistribution):
        return float(spec.support()[0])
    if isinstance(spec, PointMass1D):
        return spec.a
    if isinstance(spec, PoweredMarginal):
        return spec.nu * essential_infimum(spec.base)
    return 0.0


def is_degenerate(spec) -> Union[float, None]:
    """Atom of a one-point law, or None."""
    if isinstance(spec, PointMass1D):
        return spec.a
    if isinstance(spec, GridDistribution):
        supp = spec.support()
        return float(supp[0]) if supp.size == 1 else None
    return None
