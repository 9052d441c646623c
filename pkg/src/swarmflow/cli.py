"""``swarmflow`` command line.

Exit codes: 0 success, 2 usage error, 3 configuration or input error,
4 numerical failure, 5 verification check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import model as model_io
from .config import ConfigError, load_config
from .errors import (
    CheckpointError,
    GramianSingularError,
    NumericError,
    ShapeError,
    TrainingDivergedError,
    UncontrollableError,
)
from .export import export_trace
from .lti import TimeWindow, window_operators
from .model import ZeroField
from .propagation import PropagationPlan, ensemble_distance, propagate
from .training import train
from .verify import reports_to_json, run_all

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_NUMERIC = 4
EXIT_CHECK = 5

CHECKPOINT_NAME = "checkpoint.swf"
TRAIN_LOG_NAME = "train_log.jsonl"

log = logging.getLogger("swarmflow")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg.train.threads = args.threads
    rho0, rho1 = cfg.source_ensemble(), cfg.target_ensemble()
    for ens, which in ((rho0, "source"), (rho1, "target")):
        if ens.d != cfg.system.d:
            raise ShapeError(f"{which} ensemble dimension {ens.d} != system dimension {cfg.system.d}")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    log_path = cfg.output_dir / TRAIN_LOG_NAME
    with log_path.open("w") as fh:
        def emit(rec):
            fh.write(rec.to_json() + "\n")
            fh.flush()
            if not args.quiet:
                print(f"step {rec.step:6d}  loss {rec.loss:.4e}  |R| {rec.residual_norm_mean:.3e}"
                      f"  |grad| {rec.grad_norm:.3e}")

        model, records = train(cfg.system, rho0, rho1, cfg.train, on_record=emit)
    ckpt = cfg.output_dir / CHECKPOINT_NAME
    model.save(ckpt)
    if records:
        print(f"initial loss {records[0].loss:.4e}, final loss {records[-1].loss:.4e}")
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def cmd_propagate(args) -> int:
    cfg = load_config(args.config)
    if args.zero_model:
        field = ZeroField(cfg.system.d)
    else:
        ckpt = Path(args.checkpoint) if args.checkpoint else cfg.output_dir / CHECKPOINT_NAME
        if not ckpt.exists():
            raise FileNotFoundError(f"checkpoint not found: {ckpt}")
        field = model_io.load(ckpt)
        if field.d != cfg.system.d:
            raise ShapeError(
                f"checkpoint state dimension {field.d} does not match config state dimension {cfg.system.d}"
            )
    plan = PropagationPlan.uniform(args.steps) if args.steps else cfg.plan
    rho0, rho1 = cfg.source_ensemble(), cfg.target_ensemble()
    trace = propagate(cfg.system, field, rho0, plan, threads=args.threads)
    out = export_trace(trace, cfg.output_dir, label=cfg.system.name, svg=cfg.svg and not args.no_svg)
    dist = ensemble_distance(trace.final, rho1)
    print(f"trace written to {out}")
    print(f"terminal energy distance to target: {dist:.6e}")
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = run_all(args.seed, tolerance_scale=args.tolerance_scale)
    width = max(len(r.name) for r in reports)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  max_residual={r.max_residual:.3e}"
              f"  tol={r.tolerance:.1e}  trials={r.trials}")
    if args.json:
        Path(args.json).write_text(reports_to_json(reports) + "\n")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def cmd_gramian(args) -> int:
    cfg = load_config(args.config)
    t, r = args.window
    ops = window_operators(cfg.system, TimeWindow(t, r, min_gap=0.0))
    with np.printoptions(precision=12, suppress=False):
        print(f"Phi({r}, {t}) =\n{ops.phi}")
        print(f"W({t}, {r}) =\n{ops.gramian}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmflow", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="worker threads for batch/ensemble loops")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a coefficient field")
    s.add_argument("config")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("propagate", help="few-step propagation of the source ensemble")
    s.add_argument("config")
    s.add_argument("--checkpoint", help="defaults to <output_dir>/checkpoint.swf")
    s.add_argument("--steps", type=int, help="override K with a uniform grid")
    s.add_argument("--zero-model", action="store_true", help="use c = 0 (pure drift)")
    s.add_argument("--no-svg", action="store_true")
    s.set_defaults(func=cmd_propagate)

    s = sub.add_parser("verify", help="run the identity/oracle check suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--json", help="write the report list to this path")
    s.add_argument("--tolerance-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("gramian", help="print Phi and W for a window")
    s.add_argument("config")
    s.add_argument("--window", nargs=2, type=float, metavar=("T", "R"), required=True)
    s.set_defaults(func=cmd_gramian)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    # numeric classes first: GramianSingularError derives from ValueError
    except (GramianSingularError, NumericError, TrainingDivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, ShapeError, UncontrollableError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
