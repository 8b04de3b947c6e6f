"""Plot-ready CSV tables: Q-Q data for taste distributions, demand surfaces,
regime maps and posterior MRS histograms. Nothing is rendered here."""

from __future__ import annotations

import csv
import io
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import ndtri

from . import sara, ssf
from .core import ExpThresholdLaplace, Gamma1D, GammaGamma, GridDistribution, Regime, ValidationError
from .panel import atomic_write_text

QQ_COLUMNS = ("theoretical_quantile", "sample_quantile")
SURFACE_COLUMNS = ("y", "p", "x1", "x2", "regime")
REGIME_COLUMNS = ("y", "p", "regime")
HISTOGRAM_COLUMNS = ("bundle_x1", "bundle_x2", "bin_left", "bin_right", "count", "density")


def rows_to_csv(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_text(path, rows_to_csv(columns, rows))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [r for r in reader]


def qq_rows(dist: GridDistribution, mu: float, sigma: float, n: int = 99) -> list[tuple[float, float]]:
    """Quantiles of log A under ``dist`` against N(mu, sigma^2) quantiles
    at probabilities (k - 1/2)/n. Both columns ascend."""
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    probs = (np.arange(1, n + 1) - 0.5) / n
    theo = mu + sigma * ndtri(probs)
    w = np.clip(dist.weights, 0.0, None)
    cum = np.cumsum(w) / w.sum()
    idx = np.minimum(np.searchsorted(cum, probs, side="left"), len(dist) - 1)
    sample = np.log(dist.atoms[idx])
    return list(zip(theo.tolist(), sample.tolist()))


def _demand_fn(kind: str, model):
    if kind == "sara":
        return lambda y, p: sara.demand(model, (y, p))
    return lambda y, p: ssf.demand(model, (y, p))


def demand_surface_rows(kind: str, model, ys: ArrayLike, ps: ArrayLike) -> list[tuple]:
    """Demand on the y-by-p grid (y varies slowest)."""
    f = _demand_fn(kind, model)
    out = []
    for y in np.asarray(ys, dtype=float):
        for p in np.asarray(ps, dtype=float):
            b, r = f(float(y), float(p))
            out.append((float(y), float(p), b.x1, b.x2, r.value))
    return out


def regime_map_rows(kind: str, model, ys: ArrayLike, ps: ArrayLike) -> list[tuple]:
    return [(y, p, r) for y, p, _, _, r in demand_surface_rows(kind, model, ys, ps)]


def theoretical_regime(kind: str, model, y: float, p: float) -> Regime:
    """Closed-form regime boundaries where available: the gamma SARA
    inequality region, and for SSF with A2 ~ Exp(lam) and A1 ~ Gamma(nu, alpha)
    the boundaries p = alpha/nu and y = (nu p - alpha)/lam."""
    if kind == "sara" and isinstance(model.taste, GammaGamma):
        t = model.taste
        return sara.gamma_regime_region(t.nu1, t.alpha1, t.nu2, t.alpha2, (y, p))
    if kind == "ssf" and isinstance(model.taste, ExpThresholdLaplace):
        t = model.taste
        if not isinstance(t.a1, Gamma1D):
            raise ValidationError("closed-form SSF boundaries need a gamma A1")
        v = t.a1.nu * p - t.a1.alpha
        if v <= 0:
            return Regime.ONLY_GOOD1
        if y <= v / t.lam:
            return Regime.ONLY_GOOD2
        return Regime.INTERIOR
    raise ValidationError("no closed-form regime region for this model")


def mrs_histogram_rows(bundles: ArrayLike, samples: ArrayLike, bins: int = 30) -> list[tuple]:
    """Histogram of posterior MRS draws per bundle; samples has shape (S, n)."""
    bundles = np.asarray(bundles, dtype=float).reshape(-1, 2)
    samples = np.asarray(samples, dtype=float).reshape(-1, bundles.shape[0])
    out = []
    for k, (x1, x2) in enumerate(bundles):
        s = samples[:, k]
        s = s[np.isfinite(s)]
        if s.size == 0:
            continue
        counts, edges = np.histogram(s, bins=bins)
        dens = counts / (s.size * np.diff(edges))
        for c, lo, hi, d in zip(counts, edges[:-1], edges[1:], dens):
            out.append((float(x1), float(x2), float(lo), float(hi), int(c), float(d)))
    return out
