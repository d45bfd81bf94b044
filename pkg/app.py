# app.py  –  PAKF Bench
# Command-line front end:
#   simulate      draw one trajectory from a model
#   filter        run one filter over a trajectory file
#   bench         Monte Carlo comparison of the selected filters
#   export-model  write a model file and its spring characteristic
# Exit codes: 0 success, 1 runtime failure, 2 configuration / input error.

import argparse
import logging
import os
import sys

import numpy as np

import bench
from config import load_config, merge_overrides, save_config
from errors import ConfigError, PakfError
from filters import FILTERS, run_filter
from pwass_model import evaluate, load_model, save_model
from version import __app_name__, __version__

logger = logging.getLogger("app")

LOG_FORMAT = "[%(name)s] %(message)s"


# ─────────────────────────────────────────────────────────────
# ARGUMENTS
# ─────────────────────────────────────────────────────────────
def _filter_list(text):
    names = [n.strip().lower() for n in text.split(",") if n.strip()]
    unknown = [n for n in names if n not in FILTERS]
    if not names or unknown:
        raise argparse.ArgumentTypeError(
            f"expected a comma list from {', '.join(FILTERS)}, got {text!r}")
    return names


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pakf-bench",
        description=f"{__app_name__}: piecewise affine Kalman filtering and benchmarks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="builtin model name (sdofs) or path to a model JSON file")
    common.add_argument("--config", help="JSON config file; explicit flags override its values")
    common.add_argument("--out", help="output directory (created if absent)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for per-step diagnostics")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="simulate one trajectory to trajectory.csv")
    p.add_argument("--steps", type=int, help="trajectory length T (at least 2)")

    p = sub.add_parser("filter", parents=[common], help="run one filter over a trajectory file")
    p.add_argument("trajectory", help="trajectory.csv as written by simulate (x columns optional)")
    p.add_argument("--filter", choices=list(FILTERS), default="pakf", help="filter to run (default pakf)")
    p.add_argument("--particles", type=int, help="particle count for --filter pf")

    p = sub.add_parser("bench", parents=[common], help="Monte Carlo comparison of filters")
    p.add_argument("--steps", type=int, help="time steps per run")
    p.add_argument("--runs", type=int, help="Monte Carlo runs")
    p.add_argument("--particles", type=int, help="particle filter size")
    p.add_argument("--filters", type=_filter_list, help="comma list from pakf,ekf,pf")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")

    p = sub.add_parser("export-model", parents=[common], help="write model.json and spring.csv")
    p.add_argument("--points", type=int, default=401, help="grid points in spring.csv")
    return parser


def _effective_config(args):
    config = load_config(args.config)
    overrides = {k: getattr(args, k, None)
                 for k in ("model", "steps", "runs", "seed", "particles", "filters", "workers", "out")}
    return merge_overrides(config, overrides)


# ─────────────────────────────────────────────────────────────
# SUBCOMMANDS
# ─────────────────────────────────────────────────────────────
def cmd_simulate(args, config):
    cfg = bench.ExperimentConfig.from_config(config)
    traj = bench.draw_trajectory(cfg.model, cfg.steps, cfg.input_std, cfg.seed, 0)

    os.makedirs(config["out"], exist_ok=True)
    path = os.path.join(config["out"], "trajectory.csv")
    bench.write_trajectory(traj, path)
    print(path)
    return 0


def cmd_filter(args, config):
    cfg = bench.ExperimentConfig.from_config(config)
    model = cfg.model
    traj, has_truth = bench.read_trajectory(args.trajectory)
    got = (traj.measurements.shape[1], traj.inputs.shape[1], traj.states.shape[1] if has_truth else model.n_x)
    want = (model.n_y, model.n_u, model.n_x)
    if got != want:
        raise ConfigError(f"trajectory has (n_y, n_u, n_x) = {got} but the model needs {want}")

    out = run_filter(args.filter, model, cfg.prior, traj,
                     particles=cfg.particles,
                     rng=np.random.default_rng(cfg.seed),
                     resample_threshold=cfg.resample_threshold)

    os.makedirs(config["out"], exist_ok=True)
    bench.write_estimates(out.beliefs, os.path.join(config["out"], "estimates.csv"))
    if out.diagnostics:
        bench.write_region_probs(out.diagnostics, os.path.join(config["out"], "region_probs.csv"))

    if has_truth:
        print(f"{FILTERS[args.filter]} RMSE {bench.rmse(traj, out.beliefs):.6f}")
    return 0


def cmd_bench(args, config):
    cfg = bench.ExperimentConfig.from_config(config)
    summary = bench.run_experiment(cfg)

    bench.write_bench_csvs(summary, config["out"])
    save_config(config, os.path.join(config["out"], "config.json"))
    print(bench.format_summary(summary))

    if summary.failed_runs:
        print(f"{len(summary.failed_runs)} run(s) failed; see failed_runs.csv", file=sys.stderr)
        return 1
    return 0


def cmd_export_model(args, config):
    if args.points < 2:
        raise ConfigError(f"points must be at least 2 (got {args.points})")
    model = load_model(config["model"])
    os.makedirs(config["out"], exist_ok=True)
    save_model(model, os.path.join(config["out"], "model.json"))

    # span the finite breakpoints with the same width again on either side
    finite = model.f.breakpoints[1:-1]
    lo, hi = (float(finite.min()), float(finite.max())) if len(finite) else (-1.0, 1.0)
    pad = max(hi - lo, 1.0)
    eta = np.linspace(lo - pad, hi + pad, args.points)
    path = os.path.join(config["out"], "spring.csv")
    bench.write_rows(path, ["eta", "f"], ([format(e, ".17g"), format(v, ".17g")]
                                           for e, v in zip(eta, evaluate(model.f, eta))))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "bench": cmd_bench,
    "export-model": cmd_export_model,
}


# ─────────────────────────────────────────────────────────────
# ENTRY
# ─────────────────────────────────────────────────────────────
def main(argv=None):
    args = build_parser().parse_args(argv)

    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)

    try:
        config = _effective_config(args)
        logger.debug("effective config: %s", config)
        return COMMANDS[args.command](args, config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        # input files are wrapped as ConfigError; what reaches here is output
        print(f"error: cannot write output: {e}", file=sys.stderr)
        return 1
    except PakfError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
