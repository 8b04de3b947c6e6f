"""Method of simulated moments for the Dirichlet-process hyperparameter.

Simulated panels reuse one fixed set of innovations (stick-breaking
uniforms, base-measure normals, design uniforms) for every candidate theta,
so the objective is a deterministic, piecewise-smooth function of theta and
candidates from a uniform random search are directly comparable.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .bayes import Hyperparameter, task_rng
from .core import NoInteriorObservationsError, ValidationError
from .panel import (
    DesignSampler,
    PanelArrays,
    SegmentInnovations,
    assemble_panel,
    draw_innovations,
    simulate_segments,
)

log = logging.getLogger(__name__)

MOMENT_LABELS = (
    "mean_x1",
    "var_x1",
    "mean_x2",
    "var_x2",
    "logx1_logp",
    "logx2_logp",
    "logx1_logy",
    "logx2_logy",
    "x1_p",
    "x2_p",
    "x1_logp",
    "x2_logp",
    "x1_y",
    "x2_y",
    "x1_logy",
    "x2_logy",
)

# Optional extra moments: regime shares among periods with positive consumption.
SHARE_LABELS = ("share_only1", "share_only2", "share_interior")

# Reference estimate reported for the proprietary alcohol panel; it cannot be
# reproduced from synthetic data and is kept for documentation only.
REFERENCE_THETA_HAT = Hyperparameter(0.7987, 3.5516, 45.0951, 0.1201, 3.6597, 3.5544)


@dataclass(frozen=True, eq=False)
class MomentVector:
    values: NDArray[np.float64]
    labels: tuple[str, ...]
    # variance of each moment's sample mean, used for diagonal weighting
    variances: Optional[NDArray[np.float64]] = None

    def __post_init__(self) -> None:
        if len(self.values) != len(self.labels):
            raise ValidationError("moment values and labels differ in length")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("moments must be finite")

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.labels, self.values)}


def _as_arrays(panel) -> PanelArrays:
    if isinstance(panel, PanelArrays):
        return panel
    return PanelArrays.from_observations(list(panel))


def _mean_and_var(
    values: NDArray[np.float64], label: str, groups: Optional[NDArray[np.int64]] = None
) -> tuple[float, float]:
    """Sample mean and the variance of that mean; with ``groups`` the
    variance is clustered (observations within a group may correlate)."""
    n = values.size
    if n == 0:
        raise NoInteriorObservationsError(f"moment {label} has no observations")
    mean = values.mean()
    if groups is None:
        var = values.var(ddof=1) / n if n > 1 else np.inf
    else:
        _, idx = np.unique(groups, return_inverse=True)
        g = idx.max() + 1
        sums = np.bincount(idx, weights=values - mean, minlength=g)
        var = float(sums @ sums) / (n * n) * g / (g - 1) if g > 1 else np.inf
    return float(mean), float(var)


def compute_moments(panel, labels: Sequence[str] = MOMENT_LABELS, clustered: bool = True) -> MomentVector:
    """Sample moments over periods with positive consumption.

    Marginal moments use every period with x != 0; moments involving p use
    interior periods (the only ones where p is observed); moments involving
    y alone use every period where y is observed (x2 > 0). Variances of
    the means are clustered by segment unless ``clustered`` is False.
    """
    P = _as_arrays(panel)
    if len(P) == 0:
        raise NoInteriorObservationsError("empty panel")
    pos = (P.x1 > 0) | (P.x2 > 0)
    inter = ~np.isnan(P.p)
    yobs = ~np.isnan(P.y)
    if not inter.any():
        raise NoInteriorObservationsError("panel has no interior observations")
    x1, x2 = P.x1, P.x2
    with np.errstate(divide="ignore", invalid="ignore"):
        lx1, lx2, lp, ly = np.log(x1), np.log(x2), np.log(P.p), np.log(P.y)
    n_pos = max(int(pos.sum()), 1)
    m1, m2 = x1[pos].mean(), x2[pos].mean()
    bases = dict.fromkeys(("mean_x1", "var_x1", "mean_x2", "var_x2"), pos)
    bases.update(dict.fromkeys(("x1_y", "x2_y", "x1_logy", "x2_logy"), yobs))
    bases.update(dict.fromkeys(SHARE_LABELS, pos))
    sources = {
        "mean_x1": x1[pos],
        "var_x1": (x1[pos] - m1) ** 2 * (n_pos / max(n_pos - 1, 1)),
        "mean_x2": x2[pos],
        "var_x2": (x2[pos] - m2) ** 2 * (n_pos / max(n_pos - 1, 1)),
        "logx1_logp": (lx1 * lp)[inter],
        "logx2_logp": (lx2 * lp)[inter],
        "logx1_logy": (lx1 * ly)[inter],
        "logx2_logy": (lx2 * ly)[inter],
        "x1_p": (x1 * P.p)[inter],
        "x2_p": (x2 * P.p)[inter],
        "x1_logp": (x1 * lp)[inter],
        "x2_logp": (x2 * lp)[inter],
        "x1_y": (x1 * P.y)[yobs],
        "x2_y": (x2 * P.y)[yobs],
        "x1_logy": (x1 * ly)[yobs],
        "x2_logy": (x2 * ly)[yobs],
        "share_only1": ((x1 > 0) & (x2 == 0))[pos].astype(float),
        "share_only2": ((x1 == 0) & (x2 > 0))[pos].astype(float),
        "share_interior": inter[pos].astype(float),
    }
    vals, vars_ = [], []
    for lab in labels:
        if lab not in sources:
            raise ValidationError(f"unknown moment {lab!r}")
        groups = P.segment_id[bases.get(lab, inter)] if clustered else None
        v, s = _mean_and_var(sources[lab], lab, groups)
        vals.append(v)
        vars_.append(s)
    return MomentVector(np.array(vals), tuple(labels), np.array(vars_))


def weighting_matrix(moments: MomentVector, kind: str = "diagonal") -> NDArray[np.float64]:
    """Diagonal inverse-variance weights, falling back to the identity."""
    k = len(moments.values)
    if kind == "identity":
        return np.eye(k)
    if kind != "diagonal":
        raise ValidationError(f"unknown weighting {kind!r}")
    v = moments.variances
    if v is None or not np.all(np.isfinite(v)) or np.any(v <= 0):
        log.warning("moment variances unusable; using identity weighting")
        return np.eye(k)
    return np.diag(1.0 / v)


def quadratic_form(diff: NDArray[np.float64], omega: NDArray[np.float64]) -> float:
    return float(diff @ omega @ diff)


@dataclass(frozen=True)
class MsmConfig:
    lower: Hyperparameter
    upper: Hyperparameter
    budget: int = 2000
    weighting: str = "diagonal"
    sim_seed: int = 1
    search_seed: int = 2
    truncation: int = 300
    model_kind: str = "sara"
    design: DesignSampler = field(default_factory=DesignSampler)
    moments: tuple[str, ...] = MOMENT_LABELS
    threads: int = 1
    # simulated layout; None copies the data layout
    sim_segments: Optional[int] = None
    sim_consumers: Optional[int] = None

    def __post_init__(self) -> None:
        lo, hi = self.lower.as_array(), self.upper.as_array()
        if np.any(lo > hi):
            raise ValidationError("search box lower bound exceeds upper bound")
        if self.budget < 1:
            raise ValidationError("budget must be >= 1")

    @staticmethod
    def box_around(theta: Hyperparameter, frac: float = 0.5, **kwargs) -> "MsmConfig":
        """Box of relative half-width frac around theta in every component."""
        t = theta.as_array()
        half = frac * np.abs(t)
        return MsmConfig(Hyperparameter.from_array(t - half), Hyperparameter.from_array(t + half), **kwargs)


@dataclass(frozen=True)
class PanelLayout:
    M: int
    n_m: int
    T: int

    @classmethod
    def of(cls, panel: PanelArrays) -> "PanelLayout":
        return cls(int(np.unique(panel.segment_id).size), int(panel.consumer_id.max()) + 1, int(panel.period.max()))


class SimulatedMoments:
    """Moments of panels simulated at theta from fixed innovations."""

    def __init__(self, layout: PanelLayout, cfg: MsmConfig):
        layout = PanelLayout(cfg.sim_segments or layout.M, cfg.sim_consumers or layout.n_m, layout.T)
        self.layout = layout
        self.cfg = cfg
        self.innovations: list[SegmentInnovations] = draw_innovations(
            cfg.sim_seed, layout.M, layout.n_m, layout.T, cfg.truncation
        )

    def panel(self, theta: Hyperparameter) -> PanelArrays:
        segs = simulate_segments(self.cfg.model_kind, theta, self.innovations, self.cfg.design)
        return assemble_panel(segs, self.layout.n_m, self.layout.T)

    def __call__(self, theta: Hyperparameter) -> MomentVector:
        return compute_moments(self.panel(theta), self.cfg.moments, clustered=False)


def msm_objective(
    theta: Hyperparameter,
    data_moments: MomentVector,
    simulator: SimulatedMoments,
    omega: Optional[NDArray[np.float64]] = None,
) -> float:
    """(m - m(theta))' Omega (m - m(theta)); +inf when the simulated panel
    lacks a moment's base set."""
    if omega is None:
        omega = weighting_matrix(data_moments, simulator.cfg.weighting)
    try:
        sim = simulator(theta)
    except NoInteriorObservationsError:
        return float("inf")
    return quadratic_form(data_moments.values - sim.values, omega)


def draw_candidates(cfg: MsmConfig) -> NDArray[np.float64]:
    lo, hi = cfg.lower.as_array(), cfg.upper.as_array()
    u = task_rng(cfg.search_seed, 0).random((cfg.budget, lo.size))
    return lo + u * (hi - lo)


def estimate_theta(panel, cfg: MsmConfig) -> tuple[Hyperparameter, dict]:
    """Uniform random search over the box; returns the best point visited."""
    P = _as_arrays(panel)
    data = compute_moments(P, cfg.moments)
    omega = weighting_matrix(data, cfg.weighting)
    simulator = SimulatedMoments(PanelLayout.of(P), cfg)
    cands = draw_candidates(cfg)

    def evaluate(row: NDArray[np.float64]) -> float:
        return msm_objective(Hyperparameter.from_array(row), data, simulator, omega)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            trace = np.array(list(pool.map(evaluate, cands)))
    else:
        trace = np.array([evaluate(c) for c in cands])
    best = int(np.argmin(np.where(np.isfinite(trace), trace, np.inf)))
    theta_hat = Hyperparameter.from_array(cands[best])
    finite = np.isfinite(trace)
    diagnostics = {
        "theta_hat": theta_hat.to_json(),
        "best_index": best,
        "best_objective": float(trace[best]),
        "objective_trace": [float(v) for v in trace],
        "improved": bool(finite.any() and trace[best] < trace[0]),
        "non_finite_evaluations": int((~finite).sum()),
        "seeds": {"sim_seed": cfg.sim_seed, "search_seed": cfg.search_seed},
        "moment_labels": list(data.labels),
        "data_moments": [float(v) for v in data.values],
        "weights": [float(v) for v in np.diag(omega)],
        "candidates": cands.tolist(),
    }
    if not diagnostics["improved"]:
        log.info("random search did not improve on its first candidate")
    try:
        diagnostics["simulated_moments"] = [float(v) for v in simulator(theta_hat).values]
    except NoInteriorObservationsError:
        diagnostics["simulated_moments"] = None
    return theta_hat, diagnostics


def estimation_report_json(diagnostics: dict, extra: Optional[dict] = None) -> str:
    payload = dict(diagnostics)
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=1)
