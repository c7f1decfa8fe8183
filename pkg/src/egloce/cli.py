"""Command-line entry point.

Subcommands: run/sweep execute a JSON configuration, validate runs the
invariant battery, scatter renders a samples CSV against a world file.
Exit codes: 0 success, 1 failed validation, 2 configuration error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import ConfigError, load_config, parse_config, _parse_world
from .harness import run as run_experiment
from .harness import sweep as sweep_experiment
from .svg import scatter_svg
from .validate import run_checks

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egloce",
        description="Energy-guided concept erasure on Gaussian-mixture worlds",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_exec(name, helptext):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--out", default="egloce-out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override run.master_seed")
        p.add_argument("--workers", type=int, default=None, help="worker threads")
        p.add_argument(
            "--trajectory",
            action="store_true",
            help="capture per-step trajectories for the first chains",
        )
        return p

    add_exec("run", "execute one configuration")
    add_exec("sweep", "execute every sweep point of a configuration")

    sub.add_parser("validate", help="run the invariant checks")

    ps = sub.add_parser("scatter", help="render a samples CSV as an SVG")
    ps.add_argument("samples", help="samples CSV written by run/sweep")
    ps.add_argument("world", help="JSON file holding the world (or a full config)")
    ps.add_argument("--out", default="egloce-out", help="output directory")
    return parser


def _load_exec_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=int(args.seed))
    if args.trajectory:
        cfg = replace(cfg, capture_trajectory=True)
    return cfg


def _print_rows(rows, out_dir):
    for row in rows:
        rep = row.report
        print(
            f"[{row.tag}] hash={row.config_hash} n={rep.n} "
            f"erased={rep.erased_mass:.4f} safe_tv={rep.safe_tv:.4f} "
            f"w2={rep.sliced_w2:.4f} align={rep.alignment:.4f} "
            f"({row.wall_ms:.0f} ms)"
        )
    print(f"wrote metrics.csv, timings.csv and samples under {out_dir}")


def _cmd_run(args) -> int:
    cfg = _load_exec_config(args)
    rows = run_experiment(cfg, args.out, workers=args.workers)
    _print_rows(rows, args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load_exec_config(args)
    rows = sweep_experiment(cfg, args.out, workers=args.workers)
    _print_rows(rows, args.out)
    return EXIT_OK


def _cmd_validate(_args) -> int:
    results = run_checks()
    failed = 0
    for res in results:
        mark = "PASS" if res.passed else "FAIL"
        print(f"[{mark}] {res.name}: {res.detail}")
        failed += 0 if res.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


def _read_samples_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cols = []
        j = 0
        while reader.fieldnames and f"x{j}" in reader.fieldnames:
            cols.append(f"x{j}")
            j += 1
        if not cols:
            raise ConfigError(f"{path} has no x0..xk coordinate columns")
        rows = [[float(rec[c]) for c in cols] for rec in reader]
    if not rows:
        raise ConfigError(f"{path} holds no sample rows")
    return np.asarray(rows)


def _cmd_scatter(args) -> int:
    import os

    points = _read_samples_csv(args.samples)
    try:
        with open(args.world, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {args.world}: {exc}") from exc
    if "spec_version" in data:
        cfg = parse_config(data)
        gmm = cfg.world.prompt(cfg.prompt_id).mixture
    else:
        world = _parse_world(data.get("world", data))
        gmm = world.prompts[0].mixture
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "scatter.svg")
    scatter_svg(points, gmm, path=out_path)
    print(f"wrote {out_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "validate": _cmd_validate,
        "scatter": _cmd_scatter,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surface as a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
