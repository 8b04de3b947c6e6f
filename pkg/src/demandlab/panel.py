"""Synthetic scanner panels: per-segment Dirichlet-process tastes, exogenous
designs with a mass of zero-expenditure periods, clamped demand and
partial observability, plus CSV/JSON I/O."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import ndtr, ndtri

from . import sara, ssf
from .bayes import Hyperparameter, stick_breaking_from_innovations, task_rng
from .core import (
    GridDistribution,
    IndependentGrids,
    LogGrid,
    MaskingError,
    PanelFormatError,
    PanelObservation,
    ValidationError,
    discretize,
)

PANEL_HEADER = ("segment_id", "consumer_id", "period", "x1", "x2", "y", "p")
MODEL_KINDS = ("sara", "ssf")


@dataclass(frozen=True)
class DesignSampler:
    """Truncated log-normal expenditure and price with a point mass of
    zero-expenditure periods."""

    y_mu: float = 0.5
    y_sigma: float = 1.0
    y_max: float = 50.0
    p_mu: float = 0.3
    p_sigma: float = 0.8
    p_max: float = 20.0
    zero_mass: float = 0.43

    def __post_init__(self) -> None:
        if not (0.0 <= self.zero_mass < 1.0):
            raise ValidationError("zero_mass must lie in [0, 1)")
        if min(self.y_sigma, self.p_sigma, self.y_max, self.p_max) <= 0:
            raise ValidationError("design scales and truncation points must be positive")

    def transform(self, u_zero, u_y, u_p):
        """Map uniforms on [0, 1) to (zero flag, y, p) by inverse CDFs."""
        zero = np.asarray(u_zero) < self.zero_mass
        y = _truncated_lognormal(1.0 - np.asarray(u_y), self.y_mu, self.y_sigma, self.y_max)
        p = _truncated_lognormal(1.0 - np.asarray(u_p), self.p_mu, self.p_sigma, self.p_max)
        return zero, y, p


def _truncated_lognormal(u, mu: float, sigma: float, upper: float):
    """exp(mu + sigma Z) conditioned on being <= upper, from u in (0, 1]."""
    cap = ndtr((math.log(upper) - mu) / sigma)
    return np.minimum(np.exp(mu + sigma * ndtri(u * cap)), upper)


@dataclass(frozen=True)
class PanelConfig:
    M: int
    n_m: int
    T: int
    theta: Hyperparameter
    model_kind: str = "sara"
    design: DesignSampler = field(default_factory=DesignSampler)
    truncation: int = 1000
    seed: int = 0
    truth_grid: Optional[LogGrid] = None

    def __post_init__(self) -> None:
        if min(self.M, self.n_m, self.T) < 1:
            raise ValidationError("M, n_m and T must be >= 1")
        if self.model_kind not in MODEL_KINDS:
            raise ValidationError(f"model_kind must be one of {MODEL_KINDS}")
        if self.truncation < 1:
            raise ValidationError("truncation must be >= 1")


@dataclass(frozen=True, eq=False)
class SegmentInnovations:
    """Uniform and normal draws behind one simulated segment."""

    u1: NDArray[np.float64]
    e1: NDArray[np.float64]
    u2: NDArray[np.float64]
    e2: NDArray[np.float64]
    u_zero: NDArray[np.float64]
    u_y: NDArray[np.float64]
    u_p: NDArray[np.float64]


def draw_innovations(seed: int, M: int, n_m: int, T: int, L: int) -> list[SegmentInnovations]:
    """Independent innovation streams per segment, keyed by (seed, segment)."""
    out = []
    for m in range(M):
        rng = task_rng(seed, m)
        out.append(
            SegmentInnovations(
                u1=rng.random(L),
                e1=rng.standard_normal(L),
                u2=rng.random(L),
                e2=rng.standard_normal(L),
                u_zero=rng.random((n_m, T)),
                u_y=rng.random((n_m, T)),
                u_p=rng.random((n_m, T)),
            )
        )
    return out


def segment_tastes(
    theta: Hyperparameter, innov: SegmentInnovations, truth_grid: Optional[LogGrid] = None
) -> tuple[GridDistribution, GridDistribution]:
    """Per-segment taste marginals from fixed innovations."""
    pi1 = stick_breaking_from_innovations(np.exp(theta.mu1 + theta.sigma1 * innov.e1), innov.u1, theta.c1)
    pi2 = stick_breaking_from_innovations(np.exp(theta.mu2 + theta.sigma2 * innov.e2), innov.u2, theta.c2)
    if truth_grid is not None:
        pi1, pi2 = (snap_to_grid(g, truth_grid) for g in (pi1, pi2))
    return pi1, pi2


def snap_to_grid(dist: GridDistribution, grid: LogGrid) -> GridDistribution:
    """Distribution supported on the grid atoms (zero-weight atoms dropped)."""
    atoms = grid.atoms()
    w = discretize(dist, atoms)
    keep = w > 0
    return GridDistribution(atoms[keep], w[keep] / w[keep].sum())


def taste_model(kind: str, pi1: GridDistribution, pi2: GridDistribution):
    spec = IndependentGrids(pi1, pi2)
    return sara.SaraModel(spec) if kind == "sara" else ssf.SsfModel(spec)


@dataclass(eq=False)
class PanelArrays:
    """Column view of a panel. Absent y or p are NaN."""

    segment_id: NDArray[np.int64]
    consumer_id: NDArray[np.int64]
    period: NDArray[np.int64]
    x1: NDArray[np.float64]
    x2: NDArray[np.float64]
    y: NDArray[np.float64]
    p: NDArray[np.float64]

    def __len__(self) -> int:
        return int(self.x1.size)

    @classmethod
    def from_observations(cls, obs: Sequence[PanelObservation]) -> "PanelArrays":
        def col(name, dtype):
            return np.array([getattr(o, name) for o in obs], dtype=dtype).reshape(-1)

        def opt(name):
            return np.array([np.nan if getattr(o, name) is None else getattr(o, name) for o in obs], dtype=float)

        return cls(col("segment_id", np.int64), col("consumer_id", np.int64), col("period", np.int64),
                   col("x1", float), col("x2", float), opt("y"), opt("p"))

    def to_observations(self) -> list[PanelObservation]:
        out = []
        for i in range(len(self)):
            y = None if np.isnan(self.y[i]) else float(self.y[i])
            p = None if np.isnan(self.p[i]) else float(self.p[i])
            out.append(PanelObservation(int(self.segment_id[i]), int(self.consumer_id[i]), int(self.period[i]),
                                        float(self.x1[i]), float(self.x2[i]), y, p))
        return out

    def segment(self, m: int) -> "PanelArrays":
        sel = self.segment_id == m
        return PanelArrays(*(getattr(self, f)[sel] for f in PANEL_HEADER))

    def segments(self) -> NDArray[np.int64]:
        return np.unique(self.segment_id)


@dataclass(eq=False)
class SimulatedSegment:
    pi1: GridDistribution
    pi2: GridDistribution
    y: NDArray[np.float64]  # 0 in zero-expenditure periods
    p: NDArray[np.float64]
    x1: NDArray[np.float64]
    x2: NDArray[np.float64]


def simulate_segments(
    kind: str,
    theta: Hyperparameter,
    innovations: Sequence[SegmentInnovations],
    design: DesignSampler,
    truth_grid: Optional[LogGrid] = None,
) -> list[SimulatedSegment]:
    """Simulate several segments; SARA demand is solved for all at once."""
    tastes = [segment_tastes(theta, inn, truth_grid) for inn in innovations]
    draws = [design.transform(inn.u_zero.ravel(), inn.u_y.ravel(), inn.u_p.ravel()) for inn in innovations]
    sizes = [d[1].size for d in draws]
    zero = np.concatenate([d[0] for d in draws])
    y = np.concatenate([d[1] for d in draws])
    p = np.concatenate([d[2] for d in draws])
    rows = np.repeat(np.arange(len(innovations)), sizes)
    x1 = np.zeros(y.size)
    x2 = np.zeros(y.size)
    buy = ~zero
    if buy.any():
        if kind == "sara":
            first = sara.StackedGrids.from_grids([t[0] for t in tastes])
            second = sara.StackedGrids.from_grids([t[1] for t in tastes])
            x1[buy], x2[buy], _ = sara.demand_stacked(first, second, rows[buy], y[buy], p[buy])
        else:
            for m, (pi1, pi2) in enumerate(tastes):
                sel = buy & (rows == m)
                if sel.any():
                    x1[sel], x2[sel], _ = ssf.demand_arrays(taste_model(kind, pi1, pi2), y[sel], p[sel])
    out = []
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    for m, (pi1, pi2) in enumerate(tastes):
        s = slice(bounds[m], bounds[m + 1])
        out.append(SimulatedSegment(pi1, pi2, np.where(zero[s], 0.0, y[s]), p[s], x1[s], x2[s]))
    return out


def simulate_segment(
    kind: str,
    theta: Hyperparameter,
    innov: SegmentInnovations,
    design: DesignSampler,
    truth_grid: Optional[LogGrid] = None,
) -> SimulatedSegment:
    return simulate_segments(kind, theta, [innov], design, truth_grid)[0]


def mask_arrays(x1, x2, y, p) -> tuple[NDArray, NDArray]:
    """Observed (y, p) columns under partial observability, NaN when absent."""
    y_obs = np.where(x2 > 0, y, np.nan)
    p_obs = np.where((x1 > 0) & (x2 > 0), p, np.nan)
    return y_obs, p_obs


def assemble_panel(segments: Sequence[SimulatedSegment], n_m: int, T: int) -> PanelArrays:
    cols = {k: [] for k in PANEL_HEADER}
    consumer = np.repeat(np.arange(n_m), T)
    period = np.tile(np.arange(1, T + 1), n_m)
    for m, seg in enumerate(segments):
        y_obs, p_obs = mask_arrays(seg.x1, seg.x2, seg.y, seg.p)
        cols["segment_id"].append(np.full(seg.x1.size, m))
        cols["consumer_id"].append(consumer)
        cols["period"].append(period)
        cols["x1"].append(seg.x1)
        cols["x2"].append(seg.x2)
        cols["y"].append(y_obs)
        cols["p"].append(p_obs)
    return PanelArrays(*(np.concatenate(cols[k]) for k in PANEL_HEADER))


@dataclass(eq=False)
class SimulatedPanel:
    panel: PanelArrays
    segments: list[SimulatedSegment]

    @property
    def observations(self) -> list[PanelObservation]:
        return self.panel.to_observations()

    @property
    def truth(self) -> list[tuple[GridDistribution, GridDistribution]]:
        return [(s.pi1, s.pi2) for s in self.segments]


def simulate_panel(cfg: PanelConfig, innovations: Optional[list[SegmentInnovations]] = None) -> SimulatedPanel:
    """Simulate M segments of n_m consumers over T periods."""
    if innovations is None:
        innovations = draw_innovations(cfg.seed, cfg.M, cfg.n_m, cfg.T, cfg.truncation)
    segs = simulate_segments(cfg.model_kind, cfg.theta, innovations, cfg.design, cfg.truth_grid)
    return SimulatedPanel(assemble_panel(segs, cfg.n_m, cfg.T), segs)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def panel_to_csv(panel: PanelArrays | Sequence[PanelObservation]) -> str:
    if not isinstance(panel, PanelArrays):
        panel = PanelArrays.from_observations(list(panel))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PANEL_HEADER)
    for i in range(len(panel)):
        writer.writerow([int(panel.segment_id[i]), int(panel.consumer_id[i]), int(panel.period[i]),
                         _fmt(panel.x1[i]), _fmt(panel.x2[i]), _fmt(panel.y[i]), _fmt(panel.p[i])])
    return buf.getvalue()


def write_panel(obs: PanelArrays | Sequence[PanelObservation], path) -> None:
    atomic_write_text(path, panel_to_csv(obs))


def _parse_float(text: str, line: int, name: str) -> Optional[float]:
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise PanelFormatError(f"line {line}: field {name} is not a number: {text!r}") from None


def read_panel(path) -> list[PanelObservation]:
    """Parse a panel CSV, validating masking row by row."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != PANEL_HEADER:
        raise PanelFormatError(f"line 1: header must be {','.join(PANEL_HEADER)}")
    out = []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(PANEL_HEADER):
            raise PanelFormatError(f"line {line}: expected {len(PANEL_HEADER)} fields, got {len(row)}")
        try:
            ids = [int(v) for v in row[:3]]
        except ValueError:
            raise PanelFormatError(f"line {line}: identifiers must be integers") from None
        x1 = _parse_float(row[3], line, "x1")
        x2 = _parse_float(row[4], line, "x2")
        if x1 is None or x2 is None:
            raise PanelFormatError(f"line {line}: quantities are required")
        y = _parse_float(row[5], line, "y")
        p = _parse_float(row[6], line, "p")
        if p is not None and y is None:
            raise MaskingError(f"line {line}: p present without y")
        try:
            out.append(PanelObservation(*ids, x1, x2, y, p))
        except MaskingError as exc:
            raise MaskingError(f"line {line}: {exc}") from None
        except ValidationError as exc:
            raise PanelFormatError(f"line {line}: {exc}") from None
    return out


def truth_to_json(truth: Iterable[tuple[GridDistribution, GridDistribution]]) -> str:
    payload = [{"segment_id": m, "pi1": pi1.to_json(), "pi2": pi2.to_json()} for m, (pi1, pi2) in enumerate(truth)]
    return json.dumps(payload, indent=1)


def write_truth(truth, path) -> None:
    atomic_write_text(path, truth_to_json(truth))


def read_truth(path) -> list[tuple[GridDistribution, GridDistribution]]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    data = sorted(data, key=lambda d: d["segment_id"])
    return [(GridDistribution.from_json(d["pi1"]), GridDistribution.from_json(d["pi2"])) for d in data]
