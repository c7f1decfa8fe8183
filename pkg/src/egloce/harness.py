"""Experiment orchestration: execute runs and sweeps, compute metrics, and
write deterministic artifacts.

``metrics.csv`` carries one row per executed configuration and is a pure
function of the configuration file and master seed, so it is byte-stable
across worker counts and repeat invocations. Wall-clock timings live in a
separate ``timings.csv`` precisely because they are not.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from . import metrics as metrics_mod
from .config import ConfigError, ExperimentConfig
from .mixture import SampleBatch
from .sampler import run_chain, run_chains, derive_chain_seed
from .semantics import text_embed
from .svg import scatter_svg

__all__ = [
    "WORKERS_ENV",
    "RunRow",
    "resolve_workers",
    "run",
    "sweep",
    "metrics_header",
    "format_metrics_row",
]

WORKERS_ENV = "EGLOCE_SANDBOX_THREADS"

TRAJECTORY_CHAINS = 32

METRICS_COLUMNS = (
    "config_hash",
    "K",
    "lambda_rep",
    "lambda_ret",
    "t_start",
    "t_end",
    "grad_mode",
    "n",
    "erased_mass",
    "safe_tv",
    "sliced_w2",
    "alignment",
)


def resolve_workers(requested: int = None) -> int:
    """Worker count: the EGLOCE_SANDBOX_THREADS variable wins over the
    requested value; default 1."""
    env = os.environ.get(WORKERS_ENV)
    if env is not None and env.strip():
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}")
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1")
        return n
    if requested is None:
        return 1
    requested = int(requested)
    if requested < 1:
        raise ConfigError("workers must be >= 1")
    return requested


@dataclass(frozen=True)
class RunRow:
    """One executed configuration with its metrics and artifact paths."""

    tag: str
    config_hash: str
    cfg: ExperimentConfig
    report: metrics_mod.MetricsReport
    wall_ms: float
    samples_path: str


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def metrics_header() -> str:
    return ",".join(METRICS_COLUMNS)


def format_metrics_row(row: RunRow) -> str:
    g = row.cfg.guidance
    t_start = "" if g.window is None else str(g.window[0])
    t_end = "" if g.window is None else str(g.window[1])
    rep = row.report
    fields = (
        row.config_hash,
        str(g.K),
        _fmt(g.lambda_rep),
        _fmt(g.lambda_ret),
        t_start,
        t_end,
        g.grad_mode,
        str(rep.n),
        _fmt(rep.erased_mass),
        _fmt(rep.safe_tv),
        _fmt(rep.sliced_w2),
        _fmt(rep.alignment),
    )
    return ",".join(fields)


def derive_ref_seed(master_seed: int, row_index: int) -> int:
    """Seed for the safe-oracle reference sample of one metrics row;
    namespaced apart from the per-chain seed stream."""
    ss = np.random.SeedSequence([int(master_seed), 0x5AFE, int(row_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _samples_csv(points, assigned, unsafe_mask) -> str:
    d = points.shape[1]
    header = (
        "chain_index,"
        + ",".join(f"x{j}" for j in range(d))
        + ",assigned_component,is_unsafe"
    )
    lines = [header]
    for i in range(points.shape[0]):
        coords = ",".join(_fmt(points[i, j]) for j in range(d))
        comp = int(assigned[i])
        lines.append(f"{i},{coords},{comp},{1 if unsafe_mask[comp] else 0}")
    return "\n".join(lines) + "\n"


def _trajectory_csv(cfg: ExperimentConfig, n_chains: int, out_path: str):
    d = cfg.world.dim
    header = (
        "chain_index,step,t,"
        + ",".join(f"zt{j}" for j in range(d))
        + ","
        + ",".join(f"z0{j}" for j in range(d))
        + ",e_rep,e_ret"
    )
    lines = [header]
    for i in range(min(n_chains, TRAJECTORY_CHAINS)):
        res = run_chain(
            cfg.world,
            cfg.prompt_id,
            cfg.concept,
            cfg.schedule,
            cfg.guidance,
            seed=derive_chain_seed(cfg.master_seed, i),
            num_steps=cfg.num_steps,
            space=cfg.space,
            decoder=cfg.decoder,
            capture_trajectory=True,
        )
        for rec in res.trajectory:
            zt = ",".join(_fmt(v) for v in rec.z_t)
            z0 = ",".join(_fmt(v) for v in rec.z0_est)
            lines.append(
                f"{i},{rec.step},{rec.t},{zt},{z0},{_fmt(rec.e_rep)},{_fmt(rec.e_ret)}"
            )
    _write(out_path, "\n".join(lines) + "\n")


def _execute_row(
    cfg: ExperimentConfig, tag: str, row_index: int, out_dir: str, workers: int, backend
) -> RunRow:
    gmm = cfg.world.prompt(cfg.prompt_id).mixture
    started = time.perf_counter()
    points = run_chains(
        cfg.world,
        cfg.prompt_id,
        cfg.concept,
        cfg.schedule,
        cfg.guidance,
        cfg.master_seed,
        cfg.chains,
        num_steps=cfg.num_steps,
        space=cfg.space,
        decoder=cfg.decoder,
        workers=workers,
        backend=backend,
    )
    e_p = text_embed(cfg.space, cfg.world.prompt(cfg.prompt_id).prompt_text)
    report = metrics_mod.evaluate_batch(
        SampleBatch(points=points, seed=cfg.master_seed, provenance="chain-output"),
        gmm,
        cfg.space,
        cfg.decoder,
        e_p,
        ref_seed=derive_ref_seed(cfg.master_seed, row_index),
    )
    wall_ms = (time.perf_counter() - started) * 1000.0

    assigned = metrics_mod.assign_components(points, gmm)
    samples_path = os.path.join(out_dir, f"samples_{tag}.csv")
    _write(samples_path, _samples_csv(points, assigned, gmm.unsafe_mask))

    if cfg.svg:
        scatter_svg(points, gmm, path=os.path.join(out_dir, f"scatter_{tag}.svg"))
    if cfg.capture_trajectory:
        _trajectory_csv(
            cfg, cfg.chains, os.path.join(out_dir, f"trajectory_{tag}.csv")
        )

    return RunRow(
        tag=tag,
        config_hash=cfg.config_hash(),
        cfg=cfg,
        report=report,
        wall_ms=wall_ms,
        samples_path=samples_path,
    )


def _finish(rows, out_dir):
    metrics_lines = [metrics_header()] + [format_metrics_row(r) for r in rows]
    _write(os.path.join(out_dir, "metrics.csv"), "\n".join(metrics_lines) + "\n")
    timing_lines = ["config_hash,tag,wall_ms"] + [
        f"{r.config_hash},{r.tag},{r.wall_ms:.3f}" for r in rows
    ]
    _write(os.path.join(out_dir, "timings.csv"), "\n".join(timing_lines) + "\n")
    return rows


def run(
    cfg: ExperimentConfig,
    out_dir: str,
    workers: int = None,
    backend: str = None,
) -> list:
    """Execute a single (non-sweep) configuration and write artifacts."""
    if cfg.sweep is not None:
        raise ConfigError(
            "configuration contains a sweep block; use the sweep command"
        )
    os.makedirs(out_dir, exist_ok=True)
    workers = resolve_workers(workers)
    rows = [_execute_row(cfg, "run", 0, out_dir, workers, backend)]
    return _finish(rows, out_dir)


def sweep(
    cfg: ExperimentConfig,
    out_dir: str,
    workers: int = None,
    backend: str = None,
) -> list:
    """Execute every sweep point of a configuration and write artifacts."""
    if cfg.sweep is None:
        raise ConfigError("configuration has no sweep block; use the run command")
    os.makedirs(out_dir, exist_ok=True)
    workers = resolve_workers(workers)
    rows = []
    for idx, (tag, point_cfg) in enumerate(cfg.sweep_points()):
        rows.append(_execute_row(point_cfg, tag, idx, out_dir, workers, backend))
    return _finish(rows, out_dir)
