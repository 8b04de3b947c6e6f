"""Monotone root finding shared by the demand solvers."""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .core import BracketError

MAX_DOUBLINGS = 200


def bisect_decreasing(
    f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-13, max_iter: int = 400
) -> float:
    """Root of a non-increasing f with f(lo) > 0 >= f(hi), by sign-only bisection.

    Only signs are used, so f may be infinite outside its domain; for step
    functions the result is the infimum of {x : f(x) <= 0} up to xtol.
    """
    for _ in range(max_iter):
        if hi - lo <= xtol + 4e-16 * max(abs(lo), abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def expand_bracket_decreasing(
    f: Callable[[float], float], lo: float, hi: float, max_doublings: int = MAX_DOUBLINGS
) -> tuple[float, float]:
    """Widen [lo, hi] by doubling its width until f(lo) > 0 >= f(hi)."""
    if not hi > lo:
        hi = lo + 1.0
    flo, fhi = f(lo), f(hi)
    for _ in range(max_doublings):
        if flo > 0 and not fhi > 0:
            return lo, hi
        width = hi - lo
        if not flo > 0:
            lo, hi, fhi = lo - width, lo, flo
            flo = f(lo)
        else:
            lo, hi, flo = hi, hi + width, fhi
            fhi = f(hi)
    if flo > 0 and not fhi > 0:
        return lo, hi
    raise BracketError(f"no sign change found after {max_doublings} doublings")


def expanding_bisect_decreasing(
    f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-13
) -> float:
    lo, hi = expand_bracket_decreasing(f, lo, hi)
    return bisect_decreasing(f, lo, hi, xtol)


def newton_bisect_decreasing(
    fdf: Callable[[NDArray[np.float64], NDArray[np.bool_]], tuple[NDArray[np.float64], NDArray[np.float64]]],
    lo: NDArray[np.float64],
    hi: NDArray[np.float64],
    xtol: float = 1e-13,
    max_iter: int = 200,
) -> NDArray[np.float64]:
    """Vectorized safeguarded Newton for decreasing f with f(lo) > 0 > f(hi).

    ``fdf(x, rows)`` returns f and f' at x for the selected rows. Newton
    steps that leave the current bracket are replaced by bisection, and after
    half the iteration budget only bisection is used, so every row
    converges.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = 0.5 * (lo + hi)
    active = np.ones(x.shape, dtype=bool)
    for it in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa = x[idx]
        f, df = fdf(xa, active)
        pos = f > 0
        lo[idx] = np.where(pos, xa, lo[idx])
        hi[idx] = np.where(pos, hi[idx], xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = xa - f / df
        lo_a, hi_a = lo[idx], hi[idx]
        ok = np.isfinite(newton) & (newton > lo_a) & (newton < hi_a) & (it < max_iter // 2)
        xn = np.where(ok, newton, 0.5 * (lo_a + hi_a))
        xn = np.where(f == 0, xa, xn)
        tol = xtol + 4e-16 * np.abs(xn)
        done = (np.abs(xn - xa) <= tol) | (hi_a - lo_a <= tol) | (f == 0)
        x[idx] = xn
        active[idx[done]] = False
    return x
