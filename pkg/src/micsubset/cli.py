"""Command-line entry point.

    micsubset run --config cfg.json [--out DIR] [--seed N] [--full-size]
    micsubset sweep --config cfg.json --param alpha --grid 0.1:0.1:1.0 [--param gamma --grid 2:2:10] [--out FILE]
    micsubset moving-fc --config cfg.json --path path.json [--out DIR]
    micsubset report-complexity RUN_DIR [RUN_DIR ...] [--out FILE]

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ConfigError, ExperimentConfig

log = logging.getLogger("micsubset")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "full_size", False):
        cfg = replace(cfg, full_size=True)
    return cfg


def _cmd_run(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.out or "run"
    res = harness.run_experiment(cfg, out)
    print(json.dumps(res.summary, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    if len(args.param) != len(args.grid):
        raise ConfigError("sweep: every --param needs a matching --grid")
    grids = {p: harness.parse_grid(g) for p, g in zip(args.param, args.grid)}
    methods = args.methods.split(",") if args.methods else None
    if methods:
        for m in methods:
            if m not in harness.METHODS:
                raise ConfigError(f"methods: unknown method {m!r}")
    rows = harness.sweep_tradeoff(cfg, grids, methods, out_path=args.out)
    if args.out is None:
        sys.stdout.write(harness.write_csv(None, harness.SWEEP_COLUMNS, rows))
    return EXIT_OK


def _cmd_moving(args) -> int:
    cfg = _config(args)
    try:
        path = json.loads(Path(args.path).read_text())
    except OSError as exc:
        raise ConfigError(f"{args.path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if isinstance(path, dict):
        path = path.get("path")
    if not isinstance(path, list) or not all(isinstance(p, list) and len(p) == 2 for p in path):
        raise ConfigError("path: expected a list of [x, y] waypoints")
    rows = harness.moving_fc_run(cfg, path, args.out or "moving_fc")
    print(f"{len(rows)} waypoint rows written")
    return EXIT_OK


def _cmd_complexity(args) -> int:
    rows = harness.complexity_report(args.run_dir, args.out)
    if args.out is None:
        sys.stdout.write(harness.write_csv(None, harness.COMPLEXITY_COLUMNS, rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="micsubset", description="Microphone subset selection experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configured experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--full-size", action="store_true", help="13x13 grid instead of the 7x7 desk grid")
    run.set_defaults(func=_cmd_run)

    sw = sub.add_parser("sweep", help="trade-off sweep over parameter grids")
    sw.add_argument("--config")
    sw.add_argument("--param", action="append", required=True, choices=sorted(harness.PARAM_METHODS))
    sw.add_argument("--grid", action="append", required=True, help="start:step:stop or comma list")
    sw.add_argument("--methods", help="comma-separated methods (default: the config's method)")
    sw.add_argument("--out")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--full-size", action="store_true")
    sw.set_defaults(func=_cmd_sweep)

    mv = sub.add_parser("moving-fc", help="warm-restarted greedy along a fusion-centre path")
    mv.add_argument("--config")
    mv.add_argument("--path", required=True, help="JSON list of [x, y] waypoints")
    mv.add_argument("--out")
    mv.add_argument("--seed", type=int)
    mv.add_argument("--full-size", action="store_true")
    mv.set_defaults(func=_cmd_moving)

    cx = sub.add_parser("report-complexity", help="operation-count report from run directories")
    cx.add_argument("run_dir", nargs="+")
    cx.add_argument("--out")
    cx.set_defaults(func=_cmd_complexity)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
