"""Posterior filtering of per-segment taste distributions.

Each prior draw of (pi1, pi2) is discretized on a common log grid and then
moved to the closest pair (in Euclidean distance) that satisfies the MRS
restrictions MRS(x_t; pi) = p_t at every interior observation together with
unit mass. The restrictions are bilinear: linear in pi1 for fixed pi2 and
vice versa, so the filter alternates closed-form minimum-norm projections
onto the two linear systems. Negative mass left by a projection measures
how far the data are from any rational taste distribution (the BR ratio).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import sara, ssf
from .bayes import DirichletProcessSpec, Hyperparameter, stick_breaking_draw, task_rng
from .core import (
    GridDistribution,
    IndependentGrids,
    LogGrid,
    PanelObservation,
    SingularSystemError,
    ValidationError,
    discretize,
)
from .panel import PanelArrays

log = logging.getLogger(__name__)

Array = NDArray[np.float64]

# Bounded-rationality ratios reported for the proprietary scanner panels
# (first and second marginal). Reference values only.
REFERENCE_BR = {"California": (0.15, 0.20), "Florida": (0.17, 0.21)}

MAX_CONDITION = 1e15


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InteriorData:
    """Bundles and prices of the interior observations of one segment."""

    x1: Array
    x2: Array
    p: Array

    def __post_init__(self) -> None:
        x1, x2, p = (np.asarray(v, dtype=float).reshape(-1) for v in (self.x1, self.x2, self.p))
        if not (x1.shape == x2.shape == p.shape):
            raise ValidationError("x1, x2 and p differ in length")
        bad = ~((x1 > 0) & (x2 > 0) & np.isfinite(p) & (p > 0))
        if bad.any():
            raise ValidationError(f"observation {int(np.flatnonzero(bad)[0])} is not interior")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return int(self.x1.size)

    @classmethod
    def from_panel(cls, panel: Union[PanelArrays, Sequence[PanelObservation]]) -> "InteriorData":
        """Interior rows of a panel (rows with p observed)."""
        P = panel if isinstance(panel, PanelArrays) else PanelArrays.from_observations(list(panel))
        sel = ~np.isnan(P.p)
        return cls(P.x1[sel], P.x2[sel], P.p[sel])

    @classmethod
    def coerce(cls, obs) -> "InteriorData":
        """Accept InteriorData, or a sequence of observations that must all be interior."""
        if isinstance(obs, InteriorData):
            return obs
        if isinstance(obs, PanelArrays):
            return cls(obs.x1, obs.x2, obs.p)
        obs = list(obs)
        for o in obs:
            if o.p is None:
                raise ValidationError(f"observation {o.segment_id}/{o.consumer_id}/{o.period} is not interior")
        return cls([o.x1 for o in obs], [o.x2 for o in obs], [o.p for o in obs])


# ---------------------------------------------------------------------------
# Constraint rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MrsConstraintSystem:
    """A w = b for one side of the bilinear restrictions.

    Rows 0..N-1 are the MRS restrictions, each scaled to max-abs 1 (scaling
    a row leaves the feasible set unchanged); the last row is unit mass.
    """

    A: Array
    b: Array
    side: int

    @property
    def n_restrictions(self) -> int:
        return self.A.shape[0] - 1

    def residual(self, w: ArrayLike) -> Array:
        return self.A @ np.asarray(w, dtype=float) - self.b


def _scale_rows(rows: Array) -> Array:
    scale = np.abs(rows).max(axis=1, keepdims=True) if rows.size else np.ones((0, 1))
    scale[scale == 0] = 1.0
    return rows / scale


def _signed_transform(atoms: Array, w: Array, x: Array) -> tuple[Array, Array]:
    """(sum w e^{-a x}, sum w a e^{-a x}) per x, both scaled by the same
    positive factor. Weights may be negative."""
    live = w != 0
    if not live.any():
        raise ValidationError("weights of the fixed marginal are all zero")
    shift = atoms[live].min() * x
    q = np.exp(-(np.outer(x, atoms) - shift[:, None])) * w
    return q.sum(axis=1), q @ atoms


def _sara_rows(atoms: Array, other: Array, data: InteriorData, side: int) -> Array:
    # Side 1: sum_j pi1j e^{-a1j x1} (a1j K2 - p L2) = 0, with K2, L2 the
    # transform of pi2 and its derivative at x2. Side 2 mirrors it.
    own, cross = (data.x1, data.x2) if side == 1 else (data.x2, data.x1)
    K, L = _signed_transform(atoms, other, cross)
    e = np.exp(-(np.outer(own, atoms) - own[:, None] * atoms[0]))
    if side == 1:
        return e * (atoms[None, :] * K[:, None] - data.p[:, None] * L[:, None])
    return e * (L[:, None] - data.p[:, None] * atoms[None, :] * K[:, None])


def _ssf_rows(atoms: Array, other: Array, data: InteriorData, side: int) -> Array:
    # Marginal utilities of E[min(x1 + A1 x2, A2)] are P(x1 + A1 x2 < A2)
    # and E[A1; x1 + A1 x2 < A2]; the restriction is
    # E[(1 - p A1) 1{x1 + A1 x2 < A2}] = 0.
    # Thresholds x1 + a1 x2 increase along the sorted atoms, so both sums
    # are cumulative sums cut at a searchsorted index.
    thresh = data.x1[:, None] + atoms[None, :] * data.x2[:, None]  # (N, J) over a1
    gain = 1.0 - data.p[:, None] * atoms[None, :]
    if side == 1:
        tail = np.concatenate((np.cumsum(other[::-1])[::-1], [0.0]))  # tail[i] = sum_{k>=i} w_k
        return gain * tail[np.searchsorted(atoms, thresh, side="right")]
    head = np.concatenate((np.zeros((len(data), 1)), np.cumsum(gain * other[None, :], axis=1)), axis=1)
    # row k sums a1-atoms whose threshold lies strictly below a2_k
    idx = np.stack([np.searchsorted(t, atoms, side="left") for t in thresh])
    return np.take_along_axis(head, idx, axis=1)


def build_constraints(
    obs,
    atoms: ArrayLike,
    other: ArrayLike,
    side: int,
    kind: str = "sara",
) -> MrsConstraintSystem:
    """Linear system in the side-``side`` marginal with the other marginal
    fixed at weights ``other`` on the same ``atoms``."""
    if side not in (1, 2):
        raise ValidationError("side must be 1 or 2")
    data = InteriorData.coerce(obs)
    atoms = np.asarray(atoms, dtype=float)
    other = np.asarray(other, dtype=float)
    if other.shape != atoms.shape:
        raise ValidationError("other marginal must live on the same atoms")
    if len(data):
        if kind == "sara":
            rows = _sara_rows(atoms, other, data, side)
        elif kind == "ssf":
            rows = _ssf_rows(atoms, other, data, side)
        else:
            raise ValidationError(f"unknown model kind {kind!r}")
        rows = _scale_rows(rows)
    else:
        rows = np.zeros((0, atoms.size))
    A = np.vstack([rows, np.ones((1, atoms.size))])
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    return MrsConstraintSystem(A, b, side)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def default_regularization(A: Array) -> float:
    """1e-8 trace(AA') / number of MRS rows."""
    n = max(A.shape[0] - 1, 1)
    return 1e-8 * float(np.einsum("ij,ij->", A, A)) / n


def project(w0: ArrayLike, A: ArrayLike, b: ArrayLike, eps: float = 0.0) -> Array:
    """w0 + A'(AA' + eps I)^{-1}(b - A w0): the point of {Aw = b} nearest to
    w0 when eps = 0, its ridge-regularized analogue otherwise."""
    w0 = np.asarray(w0, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if eps < 0:
        raise ValidationError("eps must be >= 0")
    G = A @ A.T + eps * np.eye(A.shape[0])
    if not np.isfinite(G).all() or np.linalg.cond(G) > MAX_CONDITION:
        raise SingularSystemError("AA' + eps I is numerically singular")
    return w0 + A.T @ np.linalg.solve(G, b - A @ w0)


def br_ratio(w: ArrayLike) -> float:
    """Negative mass over total absolute mass; 0 for the zero vector."""
    w = np.asarray(w, dtype=float)
    total = np.abs(w).sum()
    if total == 0:
        return 0.0
    return float(-w[w < 0].sum() / total)


def _clip(w: Array, fallback: Array) -> Array:
    c = np.maximum(w, 0.0)
    s = c.sum()
    if not s > 0:
        log.warning("projection left no positive mass; keeping the prior draw")
        return fallback.copy()
    return c / s


# ---------------------------------------------------------------------------
# Filter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterConfig:
    grid: LogGrid = field(default_factory=LogGrid)
    S: int = 100
    max_steps: int = 500
    tol: float = 1e-9
    # None selects default_regularization per system
    eps: Optional[float] = None
    # Hyperparameter, or a fixed pair of Dirichlet processes
    prior: Union[Hyperparameter, tuple[DirichletProcessSpec, DirichletProcessSpec], None] = None
    truncation: int = 1000
    kind: str = "sara"
    clip: bool = True
    threads: int = 1

    def __post_init__(self) -> None:
        if self.S < 1:
            raise ValidationError("S must be >= 1")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")
        if self.eps is not None and self.eps < 0:
            raise ValidationError("eps must be >= 0")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.kind not in ("sara", "ssf"):
            raise ValidationError(f"unknown model kind {self.kind!r}")

    def prior_specs(self) -> tuple[DirichletProcessSpec, DirichletProcessSpec]:
        if self.prior is None:
            raise ValidationError("filter prior is not set")
        if isinstance(self.prior, Hyperparameter):
            return self.prior.marginal_specs(self.truncation)
        return tuple(self.prior)


@dataclass(eq=False)
class FilterResult:
    atoms: Array
    pi1: Array
    pi2: Array
    br1: float
    br2: float
    converged: bool
    steps: int
    # pre-clip projections of the last step
    raw1: Array
    raw2: Array
    # ||v1 - prior1||^2 + ||v2 - prior2||^2 after each side update (pre-clip)
    objective: list[float]


def draw_prior(cfg: FilterConfig, rng: np.random.Generator) -> tuple[Array, Array]:
    """One prior draw of (pi1, pi2) discretized on the filter grid."""
    atoms = cfg.grid.atoms()
    s1, s2 = cfg.prior_specs()
    return discretize(stick_breaking_draw(s1, rng), atoms), discretize(stick_breaking_draw(s2, rng), atoms)


def _check_grid(cfg: FilterConfig, data: InteriorData) -> None:
    if len(data) + 1 > cfg.grid.count:
        raise ValidationError(
            f"grid of {cfg.grid.count} atoms cannot carry {len(data)} restrictions plus unit mass"
        )


def filter_segment(obs, prior: tuple[ArrayLike, ArrayLike], cfg: FilterConfig) -> FilterResult:
    """Alternating projections of one prior draw (weights on cfg.grid)."""
    data = InteriorData.coerce(obs)
    _check_grid(cfg, data)
    atoms = cfg.grid.atoms()
    p1, p2 = (np.asarray(v, dtype=float) for v in prior)
    if p1.shape != atoms.shape or p2.shape != atoms.shape:
        raise ValidationError("prior weights must live on the filter grid")
    if len(data) == 0:
        return FilterResult(atoms, p1.copy(), p2.copy(), 0.0, 0.0, True, 0, p1.copy(), p2.copy(), [0.0])

    def solve(side, other, w0):
        sys_ = build_constraints(data, atoms, other, side, cfg.kind)
        eps = default_regularization(sys_.A) if cfg.eps is None else cfg.eps
        return project(w0, sys_.A, sys_.b, eps)

    w1, w2 = p1.copy(), p2.copy()
    objective: list[float] = []
    converged = False
    step = 0
    v1 = v2 = None
    for step in range(1, cfg.max_steps + 1):
        v1 = solve(1, w2, p1)
        n1 = _clip(v1, p1) if cfg.clip else v1
        objective.append(float(np.sum((v1 - p1) ** 2) + np.sum((w2 - p2) ** 2)))
        v2 = solve(2, n1, p2)
        n2 = _clip(v2, p2) if cfg.clip else v2
        objective.append(float(np.sum((v1 - p1) ** 2) + np.sum((v2 - p2) ** 2)))
        change = max(np.abs(n1 - w1).max(), np.abs(n2 - w2).max())
        w1, w2 = n1, n2
        if change < cfg.tol:
            converged = True
            break
    if not converged:
        log.info("filter stopped after %d alternations without converging", step)
    return FilterResult(atoms, w1, w2, br_ratio(v1), br_ratio(v2), converged, step, v1, v2, objective)


@dataclass(eq=False)
class PosteriorResult:
    atoms: Array
    pi1: Array
    pi2: Array
    br1: float
    br2: float
    draws: list[FilterResult]

    @property
    def converged_share(self) -> float:
        return float(np.mean([d.converged for d in self.draws]))

    def marginals(self) -> tuple[GridDistribution, GridDistribution]:
        return grid_pair(self.atoms, self.pi1, self.pi2)

    def mrs(self, x1: ArrayLike, x2: ArrayLike, kind: str = "sara") -> Array:
        return grid_mrs(self.atoms, self.pi1, self.pi2, x1, x2, kind)

    def mrs_samples(self, x1: ArrayLike, x2: ArrayLike, kind: str = "sara") -> Array:
        """MRS of each filtered draw at the bundles, shape (S, n)."""
        return np.array([grid_mrs(self.atoms, d.pi1, d.pi2, x1, x2, kind) for d in self.draws])


def grid_pair(atoms: Array, w1: Array, w2: Array) -> tuple[GridDistribution, GridDistribution]:
    def one(w):
        keep = w > 0
        return GridDistribution(atoms[keep], w[keep] / w[keep].sum())

    return one(np.asarray(w1)), one(np.asarray(w2))


def grid_mrs(atoms: Array, w1: Array, w2: Array, x1: ArrayLike, x2: ArrayLike, kind: str = "sara") -> Array:
    """MRS of the independent-grid model with non-negative weights on atoms."""
    spec = IndependentGrids(*grid_pair(atoms, w1, w2))
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if kind == "sara":
        return sara.mrs_array(sara.SaraModel(spec), x1, x2)
    model = ssf.SsfModel(spec)
    return np.array([ssf.mrs(model, (a, b)) for a, b in zip(x1.ravel(), x2.ravel())]).reshape(x1.shape)


def filter_posterior(obs, cfg: FilterConfig, rng: np.random.Generator) -> PosteriorResult:
    """Average of S filtered prior draws. Priors are drawn sequentially from
    rng before any filtering, so threading does not change the result."""
    data = InteriorData.coerce(obs)
    _check_grid(cfg, data)
    priors = [draw_prior(cfg, rng) for _ in range(cfg.S)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            draws = list(pool.map(lambda pr: filter_segment(data, pr, cfg), priors))
    else:
        draws = [filter_segment(data, pr, cfg) for pr in priors]
    return PosteriorResult(
        atoms=cfg.grid.atoms(),
        pi1=np.mean([d.pi1 for d in draws], axis=0),
        pi2=np.mean([d.pi2 for d in draws], axis=0),
        br1=float(np.mean([d.br1 for d in draws])),
        br2=float(np.mean([d.br2 for d in draws])),
        draws=draws,
    )


def filter_panel(panel: PanelArrays, cfg: FilterConfig, seed: int) -> dict[int, PosteriorResult]:
    """filter_posterior for every segment, seeded by (seed, segment id)."""
    out = {}
    for m in panel.segments():
        seg = panel.segment(int(m))
        out[int(m)] = filter_posterior(InteriorData.from_panel(seg), cfg, task_rng(seed, int(m)))
    return out


def contaminate(
    data: InteriorData, fraction: float, rng: np.random.Generator, spread: float = 1.0
) -> InteriorData:
    """Replace the price of a fixed fraction of observations by p e^{spread Z},
    which breaks MRS = p at those observations."""
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError("fraction must lie in [0, 1]")
    n = len(data)
    k = int(round(fraction * n))
    idx = rng.choice(n, size=k, replace=False)
    p = data.p.copy()
    p[idx] = p[idx] * np.exp(spread * rng.standard_normal(k))
    return InteriorData(data.x1, data.x2, p)


def filter_report(result: PosteriorResult, segment_id: int, test_bundles: Optional[Array] = None,
                  kind: str = "sara") -> dict:
    rep = {
        "segment_id": int(segment_id),
        "atoms": result.atoms.tolist(),
        "pi1": result.pi1.tolist(),
        "pi2": result.pi2.tolist(),
        "br1": result.br1,
        "br2": result.br2,
        "draw_br1": [d.br1 for d in result.draws],
        "draw_br2": [d.br2 for d in result.draws],
        "converged_share": result.converged_share,
        "steps": [d.steps for d in result.draws],
    }
    if test_bundles is not None and len(test_bundles):
        tb = np.asarray(test_bundles, dtype=float)
        rep["test_bundles"] = tb.tolist()
        rep["posterior_mrs"] = result.mrs(tb[:, 0], tb[:, 1], kind).tolist()
        rep["mrs_samples"] = result.mrs_samples(tb[:, 0], tb[:, 1], kind).tolist()
    return rep
