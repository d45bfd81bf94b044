# bench.py
# Monte Carlo harness: simulate, run every selected filter on the same data,
# score with RMSE, aggregate into the summary table, error traces and CDFs.
# Run j draws all its randomness from SeedSequence(seed, spawn_key=(j,)), so
# results do not depend on run count, worker count or scheduling.

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, LengthMismatch, PakfError
from filters import FILTERS, GaussianBelief, StepDiagnostics, run_filter
from pwass_model import PwassModel, Trajectory, load_model, simulate

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────────────────────
# Configuration
# ─────────────────────────────────────────────────────────────

def prior_from_config(cfg: dict, n_x: int) -> GaussianBelief:
    """Filter prior from prior_mean / prior_cov; null means zeros / identity."""
    mean = cfg.get("prior_mean")
    cov = cfg.get("prior_cov")
    try:
        return GaussianBelief(np.zeros(n_x) if mean is None else np.asarray(mean, dtype=float),
                              np.eye(n_x) if cov is None else np.asarray(cov, dtype=float))
    except (PakfError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid prior: {e}") from e


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    model: PwassModel
    runs: int = 500
    steps: int = 400
    seed: int = 1
    particles: int = 5000
    prior: Optional[GaussianBelief] = None
    input_std: float = 5.0
    filters: Tuple[str, ...] = ("pakf", "ekf", "pf")
    resample_threshold: float = 0.5
    workers: int = 1
    model_name: str = "sdofs"

    def __post_init__(self):
        checks = (
            (self.runs >= 1, f"runs must be at least 1 (got {self.runs})"),
            (self.steps >= 2, f"steps must be at least 2 (got {self.steps})"),
            (self.particles >= 1, f"particles must be at least 1 (got {self.particles})"),
            (self.seed >= 0, f"seed must be non-negative (got {self.seed})"),
            (self.workers >= 1, f"workers must be at least 1 (got {self.workers})"),
            (self.input_std >= 0, f"input_std must be non-negative (got {self.input_std})"),
            (0.0 <= self.resample_threshold <= 1.0,
             f"resample_threshold must lie in [0, 1] (got {self.resample_threshold})"),
            (len(self.filters) > 0, "select at least one filter"),
        )
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        unknown = [f for f in self.filters if f not in FILTERS]
        if unknown:
            raise ConfigError(f"unknown filter(s) {', '.join(unknown)}; choose from {', '.join(FILTERS)}")

        n = self.model.n_x
        prior = self.prior if self.prior is not None else GaussianBelief(np.zeros(n), np.eye(n))
        if prior.mean.shape != (n,):
            raise ConfigError(f"prior mean must have length {n}")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "filters", tuple(self.filters))

    @classmethod
    def from_config(cls, cfg: dict) -> "ExperimentConfig":
        """Build from a config dict as produced by config.load_config."""
        model = load_model(cfg["model"])
        prior = prior_from_config(cfg, model.n_x)
        try:
            filters = cfg["filters"]
            if isinstance(filters, str):
                filters = [f.strip() for f in filters.split(",") if f.strip()]
            return cls(
                model=model,
                runs=int(cfg["runs"]),
                steps=int(cfg["steps"]),
                seed=int(cfg["seed"]),
                particles=int(cfg["particles"]),
                prior=prior,
                input_std=float(cfg["input_std"]),
                filters=tuple(filters),
                resample_threshold=float(cfg["resample_threshold"]),
                workers=int(cfg["workers"]),
                model_name=str(cfg["model"]),
            )
        except ConfigError:
            raise
        except (PakfError, KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid experiment configuration: {e}") from e


# ─────────────────────────────────────────────────────────────
# Results
# ─────────────────────────────────────────────────────────────

@dataclass
class RunResult:
    run: int
    rmse: Dict[str, float] = field(default_factory=dict)
    sq_errors: Dict[str, np.ndarray] = field(default_factory=dict)   # per time, averaged over state components
    wall_time: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class Summary:
    filters: Tuple[str, ...]
    armse: Dict[str, float]
    std: Dict[str, float]
    min_rmse: Dict[str, float]
    max_rmse: Dict[str, float]
    trace: Dict[str, np.ndarray]
    cdf: Dict[str, Tuple[np.ndarray, np.ndarray]]
    mean_wall_time: Dict[str, float]
    results: List[RunResult]
    failed_runs: List[Tuple[int, str]]


def rmse(truth, estimates: Sequence[GaussianBelief]) -> float:
    """sqrt(sum_t |x_t - m_t|^2 / (n_x T))."""
    states = np.asarray(getattr(truth, "states", truth), dtype=float)
    if len(states) != len(estimates):
        raise LengthMismatch(f"{len(states)} true states but {len(estimates)} estimates")
    means = np.stack([b.mean for b in estimates])
    return float(np.sqrt(np.mean((states - means) ** 2)))


def rmse_statistics(values) -> Tuple[float, float, float, float]:
    """(ARMSE, STD, min, max) of per-run RMSE values."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std()), float(v.min()), float(v.max())


# ─────────────────────────────────────────────────────────────
# One run
# ─────────────────────────────────────────────────────────────

def run_streams(seed: int, run: int):
    """(initial-state/input, simulation, filter) seed sequences for one run."""
    return np.random.SeedSequence(seed, spawn_key=(run,)).spawn(3)


def draw_trajectory(model: PwassModel, steps: int, input_std: float, seed: int, run: int) -> Trajectory:
    """x_1 ~ N(0, I), u_t ~ N(0, input_std^2 I), then simulate."""
    init_ss, sim_ss, _ = run_streams(seed, run)
    rng = np.random.default_rng(init_ss)
    x1 = rng.standard_normal(model.n_x)
    inputs = input_std * rng.standard_normal((steps - 1, model.n_u))
    return simulate(model, x1, inputs, sim_ss)


def run_single(cfg: ExperimentConfig, run: int) -> RunResult:
    traj = draw_trajectory(cfg.model, cfg.steps, cfg.input_std, cfg.seed, run)
    _, _, filter_ss = run_streams(cfg.seed, run)
    result = RunResult(run)
    for name in cfg.filters:
        start = time.perf_counter()
        try:
            out = run_filter(name, cfg.model, cfg.prior, traj,
                             particles=cfg.particles,
                             rng=np.random.default_rng(filter_ss),
                             resample_threshold=cfg.resample_threshold)
        except PakfError as e:
            return RunResult(run, error=f"{FILTERS[name]}: {type(e).__name__}: {e}")
        result.wall_time[name] = time.perf_counter() - start
        means = np.stack([b.mean for b in out.beliefs])
        result.sq_errors[name] = np.mean((traj.states - means) ** 2, axis=1)
        result.rmse[name] = rmse(traj, out.beliefs)
    return result


# ─────────────────────────────────────────────────────────────
# Experiment
# ─────────────────────────────────────────────────────────────

def aggregate(results: List[RunResult], filters: Sequence[str]) -> Summary:
    ok = [r for r in results if r.error is None]
    failed = [(r.run, r.error) for r in results if r.error is not None]
    if not ok:
        raise PakfError(f"all {len(results)} Monte Carlo runs failed; first error: {failed[0][1]}")

    armse, std, lo, hi, trace, cdf, wall = {}, {}, {}, {}, {}, {}, {}
    for name in filters:
        values = np.array([r.rmse[name] for r in ok])
        armse[name], std[name], lo[name], hi[name] = rmse_statistics(values)
        trace[name] = np.mean(np.sqrt(np.stack([r.sq_errors[name] for r in ok])), axis=0)
        ordered = np.sort(values)
        cdf[name] = (ordered, np.arange(1, len(ordered) + 1) / len(ordered))
        wall[name] = float(np.mean([r.wall_time[name] for r in ok]))
    return Summary(tuple(filters), armse, std, lo, hi, trace, cdf, wall, results, failed)


def run_experiment(cfg: ExperimentConfig) -> Summary:
    logger.info("running %d Monte Carlo runs of %d steps (%s) on %s",
                cfg.runs, cfg.steps, ", ".join(FILTERS[f] for f in cfg.filters), cfg.model_name)
    worker = partial(run_single, cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(worker, range(cfg.runs), chunksize=max(1, cfg.runs // (4 * cfg.workers))))
    else:
        results = [worker(j) for j in range(cfg.runs)]

    summary = aggregate(results, cfg.filters)
    for run, message in summary.failed_runs:
        logger.warning("run %d failed and is excluded: %s", run, message)

    wall = summary.mean_wall_time
    if "pf" in wall and "pakf" in wall and wall["pakf"] > 0:
        logger.info("PF (%d particles) / PAKF wall-time ratio per run: %.2f (reference factor: 6 at 10 000 particles)",
                    cfg.particles, wall["pf"] / wall["pakf"])
    return summary


# ─────────────────────────────────────────────────────────────
# CSV output
# ─────────────────────────────────────────────────────────────

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.info("wrote %s", path)


def write_bench_csvs(summary: Summary, out_dir) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    names = summary.filters
    labels = [FILTERS[n] for n in names]
    ok = [r for r in summary.results if r.error is None]
    paths = {k: os.path.join(out_dir, f"{k}.csv") for k in ("runs", "armse_trace", "rmse_cdf", "summary")}

    write_rows(paths["runs"], ["run", "filter", "rmse", "wall_time_s"],
                ([r.run, FILTERS[n], _fmt(r.rmse[n]), _fmt(r.wall_time[n])] for r in ok for n in names))

    steps = len(summary.trace[names[0]])
    write_rows(paths["armse_trace"], ["t"] + labels,
                ([t + 1] + [_fmt(summary.trace[n][t]) for n in names] for t in range(steps)))

    write_rows(paths["rmse_cdf"], ["filter", "rmse", "cdf"],
                ([FILTERS[n], _fmt(v), _fmt(p)] for n in names for v, p in zip(*summary.cdf[n])))

    write_rows(paths["summary"], ["filter", "armse", "std", "min_rmse", "max_rmse"],
                ([FILTERS[n], _fmt(summary.armse[n]), _fmt(summary.std[n]),
                  _fmt(summary.min_rmse[n]), _fmt(summary.max_rmse[n])] for n in names))

    written = list(paths.values())
    if summary.failed_runs:
        failed_path = os.path.join(out_dir, "failed_runs.csv")
        write_rows(failed_path, ["run", "error"], summary.failed_runs)
        written.append(failed_path)
    return written


def read_runs_csv(path) -> Dict[str, List[float]]:
    """Per-filter RMSE values (keyed by display name) from a runs.csv file."""
    values: Dict[str, List[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values.setdefault(row["filter"], []).append(float(row["rmse"]))
    return values


def format_summary(summary: Summary) -> str:
    """Table-shaped text summary for the console."""
    lines = [f"{'Filter':<8}{'ARMSE':>12}{'STD':>12}{'min RMSE':>12}{'max RMSE':>12}{'time/run':>12}"]
    for n in summary.filters:
        lines.append(f"{FILTERS[n]:<8}{summary.armse[n]:>12.5f}{summary.std[n]:>12.5f}"
                     f"{summary.min_rmse[n]:>12.5f}{summary.max_rmse[n]:>12.5f}"
                     f"{summary.mean_wall_time[n]:>11.3f}s")
    ok = len(summary.results) - len(summary.failed_runs)
    lines.append(f"{ok} of {len(summary.results)} runs used")
    return "\n".join(lines)


# ─────────────────────────────────────────────────────────────
# Trajectory / estimate files
# ─────────────────────────────────────────────────────────────

def write_trajectory(traj: Trajectory, path) -> None:
    n_x, n_u, n_y = traj.states.shape[1], traj.inputs.shape[1], traj.measurements.shape[1]
    header = (["t"] + [f"x{k + 1}" for k in range(n_x)] + [f"u{k + 1}" for k in range(n_u)]
              + [f"y{k + 1}" for k in range(n_y)])
    rows = []
    for t in range(traj.T):
        u = [_fmt(v) for v in traj.inputs[t]] if t < traj.T - 1 else [""] * n_u
        rows.append([t + 1] + [_fmt(v) for v in traj.states[t]] + u + [_fmt(v) for v in traj.measurements[t]])
    write_rows(path, header, rows)


def _columns(header, prefix):
    cols = [i for i, h in enumerate(header) if h.startswith(prefix) and h[len(prefix):].isdigit()]
    return sorted(cols, key=lambda i: int(header[i][len(prefix):]))


def read_trajectory(path) -> Tuple[Trajectory, bool]:
    """Read a trajectory.csv. Returns (trajectory, has_truth); without x columns
    the states are NaN and has_truth is False."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ConfigError(f"cannot read trajectory {path}: {e}") from e
    if len(rows) < 2:
        raise ConfigError(f"trajectory {path} has no data rows")

    header, body = rows[0], rows[1:]
    xs, us, ys = _columns(header, "x"), _columns(header, "u"), _columns(header, "y")
    if not ys:
        raise ConfigError(f"trajectory {path} has no measurement (y) columns")
    try:
        measurements = np.array([[float(r[i]) for i in ys] for r in body])
        inputs = np.array([[float(r[i]) for i in us] for r in body[:-1]]).reshape(len(body) - 1, len(us))
        if xs:
            states = np.array([[float(r[i]) for i in xs] for r in body])
        else:
            states = np.full((len(body), 0), np.nan)
    except (ValueError, IndexError) as e:
        raise ConfigError(f"malformed trajectory {path}: {e}") from e
    return Trajectory(states, inputs, measurements), bool(xs)


def write_estimates(beliefs: Sequence[GaussianBelief], path) -> None:
    n = len(beliefs[0].mean)
    header = (["t"] + [f"m{k + 1}" for k in range(n)]
              + [f"P{i + 1}_{j + 1}" for i in range(n) for j in range(n)])
    write_rows(path, header,
                ([t + 1] + [_fmt(v) for v in b.mean] + [_fmt(v) for v in b.cov.ravel()]
                 for t, b in enumerate(beliefs)))


def write_region_probs(diagnostics: Sequence[StepDiagnostics], path) -> None:
    """Row t holds Pr(x_t in R_i | y_{1:t+1}) and the number of dropped regions."""
    n_r = len(diagnostics[0].region_probs)
    write_rows(path, ["t"] + [f"region{i + 1}" for i in range(n_r)] + ["dropped"],
                ([t + 1] + [_fmt(p) for p in d.region_probs] + [d.dropped_regions]
                 for t, d in enumerate(diagnostics)))
