"""Command-line driver: simulate, estimate, filter, demand, report.

Every run reads one YAML configuration. All randomness derives from the
master seed (``seed`` key or ``--seed``); every JSON report records that
seed and a hash of the configuration. Exit codes: 0 success, 2 invalid
configuration (the message names the offending key path), 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import __version__, report, sara, ssf
from .bayes import Hyperparameter, task_rng
from .core import (
    CommonComponent,
    DemandLabError,
    ExpThresholdLaplace,
    Gamma1D,
    GammaGamma,
    GridDistribution,
    IndependentGrids,
    IndependentMarginals,
    JointGrid,
    LogGrid,
    LogNormal1D,
    LogNormalPair,
    PointMass,
    PointMass1D,
)
from .estimate import MOMENT_LABELS, SHARE_LABELS, MsmConfig, estimate_theta
from .filtering import FilterConfig, InteriorData, filter_posterior, filter_report
from .panel import (
    DesignSampler,
    PanelArrays,
    PanelConfig,
    atomic_write_text,
    read_panel,
    read_truth,
    simulate_panel,
    write_panel,
    write_truth,
)

log = logging.getLogger("demandlab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# sub-seeds derived from the master seed
SEED_STREAMS = {"panel": 0, "msm_sim": 1, "msm_search": 2, "filter": 3}


class ConfigError(DemandLabError):
    """Invalid run configuration; the message starts with the key path."""


# ---------------------------------------------------------------------------
# Configuration access
# ---------------------------------------------------------------------------


@dataclass
class Section:
    data: dict
    path: str

    def _where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data and self.data[key] is not None

    def get(self, key: str, conv: Callable = float, default: Any = ...) -> Any:
        if not self.has(key):
            if default is ...:
                raise ConfigError(f"{self._where(key)}: missing required key")
            return default
        try:
            return conv(self.data[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self._where(key)}: {exc}") from exc

    def sub(self, key: str, required: bool = True) -> Optional["Section"]:
        if not self.has(key):
            if required:
                raise ConfigError(f"{self._where(key)}: missing required section")
            return None
        val = self.data[key]
        if not isinstance(val, dict):
            raise ConfigError(f"{self._where(key)}: expected a mapping")
        return Section(val, self._where(key))

    def build(self, what: str, fn: Callable):
        """Run a constructor, reporting its validation errors under this path."""
        try:
            return fn()
        except ConfigError:
            raise
        except (DemandLabError, TypeError, ValueError) as exc:
            raise ConfigError(f"{self.path or what}: {exc}") from exc


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    raise ValueError(f"expected true/false, got {v!r}")


def _int(v) -> int:
    if isinstance(v, bool) or float(v) != int(v):
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _float_list(v) -> list[float]:
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list")
    return [float(x) for x in v]


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config: file {path} not found") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: YAML parse error: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return data


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def derive_seed(master: int, stream: str) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(SEED_STREAMS[stream],))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def parse_theta(sec: Section) -> Hyperparameter:
    return sec.build("theta", lambda: Hyperparameter(**{k: sec.get(k) for k in Hyperparameter.names()}))


def parse_grid(sec: Optional[Section]) -> LogGrid:
    if sec is None:
        return LogGrid()
    return sec.build("grid", lambda: LogGrid(sec.get("count", _int, 500), sec.get("log_min", float, -10.0),
                                             sec.get("log_max", float, 10.0)))


def parse_design(sec: Optional[Section]) -> DesignSampler:
    if sec is None:
        return DesignSampler()
    known = DesignSampler.__dataclass_fields__
    for k in sec.data:
        if k not in known:
            raise ConfigError(f"{sec._where(k)}: unknown design key")
    return sec.build("design", lambda: DesignSampler(**{k: sec.get(k) for k in sec.data}))


def parse_panel(sec: Section) -> PanelConfig:
    truth_grid = None
    if sec.has("truth_grid"):
        v = sec.data["truth_grid"]
        if isinstance(v, dict):
            truth_grid = parse_grid(sec.sub("truth_grid"))
        elif sec.get("truth_grid", _bool):
            truth_grid = LogGrid()
    return sec.build("panel", lambda: PanelConfig(
        M=sec.get("M", _int), n_m=sec.get("n_m", _int), T=sec.get("T", _int),
        theta=parse_theta(sec.sub("theta")),
        model_kind=sec.get("model_kind", str, "sara"),
        design=parse_design(sec.sub("design", required=False)),
        truncation=sec.get("truncation", _int, 1000),
        seed=0, truth_grid=truth_grid,
    ))


def parse_marginal(sec: Section):
    kind = sec.get("type", str)
    if kind == "gamma":
        return sec.build("marginal", lambda: Gamma1D(sec.get("nu"), sec.get("alpha")))
    if kind == "lognormal":
        return sec.build("marginal", lambda: LogNormal1D(sec.get("mu"), sec.get("sigma")))
    if kind == "point":
        return sec.build("marginal", lambda: PointMass1D(sec.get("a")))
    if kind == "grid":
        return sec.build("marginal", lambda: GridDistribution(sec.get("atoms", _float_list),
                                                              sec.get("weights", _float_list)))
    raise ConfigError(f"{sec._where('type')}: unknown marginal type {kind!r}")


def parse_model(sec: Section):
    """(kind, model) from a {kind, taste: {type, ...}} mapping."""
    kind = sec.get("kind", str, "sara")
    if kind not in ("sara", "ssf"):
        raise ConfigError(f"{sec._where('kind')}: must be sara or ssf")
    t = sec.sub("taste")
    typ = t.get("type", str)
    if typ == "GammaGamma":
        spec = t.build("taste", lambda: GammaGamma(t.get("nu1"), t.get("alpha1"), t.get("nu2"), t.get("alpha2")))
    elif typ == "PointMass":
        spec = t.build("taste", lambda: PointMass(t.get("a1"), t.get("a2")))
    elif typ == "LogNormalPair":
        spec = t.build("taste", lambda: LogNormalPair(t.get("mu1"), t.get("sigma1"), t.get("mu2"), t.get("sigma2")))
    elif typ == "IndependentMarginals":
        spec = IndependentMarginals(parse_marginal(t.sub("first")), parse_marginal(t.sub("second")))
    elif typ == "IndependentGrids":
        spec = t.build("taste", lambda: IndependentGrids(parse_marginal(t.sub("first")),
                                                         parse_marginal(t.sub("second"))))
    elif typ == "CommonComponent":
        spec = CommonComponent(parse_marginal(t.sub("common")), parse_marginal(t.sub("first")),
                               parse_marginal(t.sub("second")))
    elif typ == "ExpThresholdLaplace":
        spec = t.build("taste", lambda: ExpThresholdLaplace(parse_marginal(t.sub("a1")), t.get("lam")))
    elif typ == "JointGrid":
        spec = t.build("taste", lambda: JointGrid(t.get("a1", _float_list), t.get("a2", _float_list),
                                                  t.get("weights", _float_list)))
    else:
        raise ConfigError(f"{t._where('type')}: unknown taste type {typ!r}")
    model = sec.build("model", lambda: sara.SaraModel(spec) if kind == "sara" else ssf.SsfModel(spec))
    return kind, model


def parse_msm(sec: Section, center: Optional[Hyperparameter], master: int, threads: int) -> MsmConfig:
    if sec.has("lower") or sec.has("upper"):
        lower, upper = parse_theta(sec.sub("lower")), parse_theta(sec.sub("upper"))
    else:
        c = parse_theta(sec.sub("center")) if sec.has("center") else center
        if c is None:
            raise ConfigError(f"{sec._where('center')}: missing search box (center or lower/upper)")
        frac = sec.get("box_frac", float, 0.5)
        box = sec.build("box", lambda: MsmConfig.box_around(c, frac))
        lower, upper = box.lower, box.upper
    moments = tuple(sec.get("moments", lambda v: [str(x) for x in v], list(MOMENT_LABELS)))
    for m in moments:
        if m not in MOMENT_LABELS + SHARE_LABELS:
            raise ConfigError(f"{sec._where('moments')}: unknown moment {m!r}")
    return sec.build("estimate", lambda: MsmConfig(
        lower, upper,
        budget=sec.get("budget", _int, 2000),
        weighting=sec.get("weighting", str, "diagonal"),
        sim_seed=derive_seed(master, "msm_sim"),
        search_seed=derive_seed(master, "msm_search"),
        truncation=sec.get("truncation", _int, 300),
        model_kind=sec.get("model_kind", str, "sara"),
        moments=moments,
        threads=threads,
        sim_segments=sec.get("sim_segments", _int, None),
        sim_consumers=sec.get("sim_consumers", _int, None),
    ))


def parse_filter(sec: Section, theta: Hyperparameter, threads: int) -> FilterConfig:
    return sec.build("filter", lambda: FilterConfig(
        grid=parse_grid(sec.sub("grid", required=False)),
        S=sec.get("S", _int, 100),
        max_steps=sec.get("max_steps", _int, 500),
        tol=sec.get("tol", float, 1e-9),
        eps=sec.get("eps", float, None),
        prior=theta,
        truncation=sec.get("truncation", _int, 1000),
        kind=sec.get("model_kind", str, "sara"),
        clip=sec.get("clip", _bool, True),
        threads=threads,
    ))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@dataclass
class Run:
    cfg: dict
    root: Section
    seed: int
    out: Path
    threads: int
    hash: str

    def stamp(self, payload: dict) -> dict:
        return {"seed": self.seed, "config_hash": self.hash, "version": __version__, **payload}

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        atomic_write_text(path, json.dumps(self.stamp(payload), indent=1))
        return path


def cmd_simulate(run: Run, args) -> None:
    pc = parse_panel(run.root.sub("panel"))
    pc = PanelConfig(pc.M, pc.n_m, pc.T, pc.theta, pc.model_kind, pc.design, pc.truncation,
                     derive_seed(run.seed, "panel"), pc.truth_grid)
    sim = simulate_panel(pc)
    write_panel(sim.panel, run.out / "panel.csv")
    write_truth(sim.truth, run.out / "truth.json")
    run.write_json("simulate.json", {"rows": len(sim.panel), "theta": pc.theta.to_json(),
                                     "files": ["panel.csv", "truth.json"]})
    print(run.out / "panel.csv")


def _panel_path(run: Run, args) -> Path:
    return Path(args.panel) if args.panel else run.out / "panel.csv"


def _load_panel(path: Path) -> PanelArrays:
    if not path.exists():
        raise FileNotFoundError(f"panel file {path} not found")
    return PanelArrays.from_observations(read_panel(path))


def cmd_estimate(run: Run, args) -> None:
    panel = _load_panel(_panel_path(run, args))
    sec = run.root.sub("estimate")
    center = parse_theta(run.root.sub("panel").sub("theta")) if run.root.has("panel") and \
        run.root.sub("panel").has("theta") else None
    mc = parse_msm(sec, center, run.seed, run.threads)
    theta_hat, diag = estimate_theta(panel, mc)
    diag["search_box"] = {"lower": mc.lower.to_json(), "upper": mc.upper.to_json()}
    path = run.write_json("estimate.json", diag)
    print(path)


def _theta_for_filter(run: Run, args) -> Hyperparameter:
    if args.theta:
        src = Path(args.theta)
        if not src.exists():
            raise FileNotFoundError(f"theta source {src} not found")
        data = json.loads(src.read_text())
        return Hyperparameter(**data.get("theta_hat", data))
    sec = run.root.sub("filter")
    if sec.has("theta"):
        return parse_theta(sec.sub("theta"))
    est = run.out / "estimate.json"
    if est.exists():
        return Hyperparameter(**json.loads(est.read_text())["theta_hat"])
    raise ConfigError("filter.theta: missing (no --theta and no estimate.json in the output directory)")


def cmd_filter(run: Run, args) -> None:
    panel = _load_panel(_panel_path(run, args))
    sec = run.root.sub("filter")
    theta = _theta_for_filter(run, args)
    fc = parse_filter(sec, theta, run.threads)
    bundles = sec.get("test_bundles", lambda v: np.asarray(v, dtype=float).reshape(-1, 2), np.zeros((0, 2)))
    fseed = derive_seed(run.seed, "filter")
    segments = [int(m) for m in panel.segments()]
    if sec.has("segments"):
        wanted = set(sec.get("segments", lambda v: [int(x) for x in v]))
        segments = [m for m in segments if m in wanted]
    for m in segments:
        data = InteriorData.from_panel(panel.segment(m))
        post = filter_posterior(data, fc, task_rng(fseed, m))
        rep = filter_report(post, m, bundles, fc.kind)
        rep["prior_theta"] = theta.to_json()
        run.write_json(f"filter_segment_{m}.json", rep)
        log.info("segment %d: BR %.4f / %.4f", m, post.br1, post.br2)
    print(run.out)


def cmd_demand(run: Run, args) -> None:
    sec = run.root.sub("demand")
    kind, model = parse_model(sec.sub("model"))
    d = sec.sub("design")
    y, p = d.get("y"), d.get("p")
    bundle, regime = d.build("design", lambda: (sara.demand if kind == "sara" else ssf.demand)(model, (y, p)))
    payload = {"y": y, "p": p, "x1": bundle.x1, "x2": bundle.x2, "regime": regime.value}
    run.write_json("demand.json", payload)
    print(json.dumps(payload))


def _axis(sec: Section, key: str, default: tuple[float, float, int]) -> np.ndarray:
    if not sec.has(key):
        lo, hi, n = default
    else:
        a = sec.sub(key)
        lo, hi, n = a.get("min"), a.get("max"), a.get("count", _int)
        if not (0 < lo < hi and n >= 2):
            raise ConfigError(f"{a.path}: need 0 < min < max and count >= 2")
    return np.linspace(lo, hi, n)


def cmd_report(run: Run, args) -> None:
    art = Path(args.artifacts) if args.artifacts else run.out
    if not art.is_dir():
        raise FileNotFoundError(f"artifacts directory {art} not found")
    sec = run.root.sub("report", required=False) or Section({}, "report")
    bins = sec.get("bins", _int, 30)
    written = []
    filters = sorted(art.glob("filter_segment_*.json"))
    truth_path = art / "truth.json"
    for f in filters:
        rep = json.loads(f.read_text())
        m = rep["segment_id"]
        theta = Hyperparameter(**rep["prior_theta"])
        atoms = np.asarray(rep["atoms"])
        for j, (w, mu, sg) in enumerate(((rep["pi1"], theta.mu1, theta.sigma1),
                                         (rep["pi2"], theta.mu2, theta.sigma2)), start=1):
            w = np.asarray(w)
            keep = w > 0
            dist = GridDistribution(atoms[keep], w[keep] / w[keep].sum())
            name = f"qq_segment_{m}_pi{j}.csv"
            report.write_csv(run.out / name, report.QQ_COLUMNS, report.qq_rows(dist, mu, sg))
            written.append(name)
        if rep.get("mrs_samples"):
            name = f"mrs_hist_segment_{m}.csv"
            report.write_csv(run.out / name, report.HISTOGRAM_COLUMNS,
                             report.mrs_histogram_rows(rep["test_bundles"], rep["mrs_samples"], bins))
            written.append(name)
    if truth_path.exists() and filters:
        theta = Hyperparameter(**json.loads(filters[0].read_text())["prior_theta"])
        for m, (pi1, pi2) in enumerate(read_truth(truth_path)):
            for j, (dist, mu, sg) in enumerate(((pi1, theta.mu1, theta.sigma1), (pi2, theta.mu2, theta.sigma2)), 1):
                name = f"qq_truth_{m}_pi{j}.csv"
                report.write_csv(run.out / name, report.QQ_COLUMNS, report.qq_rows(dist, mu, sg))
                written.append(name)
    if sec.has("model"):
        kind, model = parse_model(sec.sub("model"))
        ys = _axis(sec, "y_grid", (0.5, 10.0, 20))
        ps = _axis(sec, "p_grid", (0.2, 5.0, 20))
        rows = report.demand_surface_rows(kind, model, ys, ps)
        report.write_csv(run.out / "demand_surface.csv", report.SURFACE_COLUMNS, rows)
        report.write_csv(run.out / "regime_map.csv", report.REGIME_COLUMNS, [(y, p, r) for y, p, _, _, r in rows])
        written += ["demand_surface.csv", "regime_map.csv"]
    if not written:
        raise FileNotFoundError(f"no artifacts to report in {art} (need filter_segment_*.json or report.model)")
    run.write_json("report.json", {"files": written, "columns": {
        "qq": report.QQ_COLUMNS, "demand_surface": report.SURFACE_COLUMNS,
        "regime_map": report.REGIME_COLUMNS, "mrs_hist": report.HISTOGRAM_COLUMNS}})
    print(run.out / "report.json")


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "filter": cmd_filter,
    "demand": cmd_demand,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="demandlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--threads", type=int, help="worker threads")
        if name in ("estimate", "filter"):
            sp.add_argument("--panel", help="panel CSV (default: <out>/panel.csv)")
        if name == "filter":
            sp.add_argument("--theta", help="estimate.json or a JSON hyperparameter")
        if name == "report":
            sp.add_argument("--artifacts", help="directory holding artifacts (default: <out>)")
    return ap


def _setup_logging() -> None:
    level = os.environ.get("DEMANDLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        root = Section(cfg, "")
        seed = args.seed if args.seed is not None else root.get("seed", _int)
        if seed < 0:
            raise ConfigError("seed: must be non-negative")
        out = Path(args.out) if args.out else Path(root.get("out", str, "."))
        threads = args.threads if args.threads is not None else root.get("threads", _int, 1)
        if threads < 1:
            raise ConfigError("threads: must be >= 1")
        run = Run(cfg, root, int(seed), out, int(threads), config_hash(cfg))
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DemandLabError, OSError, ValueError, KeyError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
