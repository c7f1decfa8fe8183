"""Throughput comparison of the numba and numpy chain kernels.

Runs the same guided and vanilla batches on both backends, reports
chains per second (best of --repeats), and checks that the endpoints
agree. Compilation happens in an untimed warmup pass.

Usage:
    python3 benchmarks/backends_bench.py [--chains 5000] [--repeats 3]
                                         [--workers 4] [--config path.json]
"""

import argparse
import time

import numpy as np

from egloce import backend
from egloce.config import default_config_dict, load_config, parse_config
from egloce.sampler import run_chains, vanilla_chains


def _time_batch(fn, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        started = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - started)
    return out, best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chains", type=int, default=5000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--config", default=None, help="experiment JSON (default: built-in)")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else parse_config(default_config_dict())

    backends = ["numpy"]
    try:
        backend.warmup("numba")
        backends.append("numba")
    except Exception as exc:
        print(f"numba backend unavailable ({exc}); timing numpy only")
    backend.warmup("numpy")

    results = {}
    for name in backends:
        guided, t_g = _time_batch(
            lambda: run_chains(
                cfg.world,
                cfg.prompt_id,
                cfg.concept,
                cfg.schedule,
                cfg.guidance,
                cfg.master_seed,
                args.chains,
                num_steps=cfg.num_steps,
                space=cfg.space,
                decoder=cfg.decoder,
                workers=args.workers,
                backend=name,
            ),
            args.repeats,
        )
        plain, t_v = _time_batch(
            lambda: vanilla_chains(
                cfg.world,
                cfg.prompt_id,
                cfg.schedule,
                cfg.guidance.omega,
                cfg.master_seed,
                args.chains,
                num_steps=cfg.num_steps,
                workers=args.workers,
                backend=name,
            ),
            args.repeats,
        )
        results[name] = (guided, t_g, plain, t_v)

    print(
        f"\n{args.chains} chains x {cfg.num_steps} steps, K={cfg.guidance.K}, "
        f"window={cfg.guidance.window}, workers={args.workers}, "
        f"best of {args.repeats}\n"
    )
    print(f"{'backend':<8} {'guided s':>9} {'chains/s':>10} {'vanilla s':>10} {'chains/s':>10}")
    for name in backends:
        _, t_g, _, t_v = results[name]
        print(
            f"{name:<8} {t_g:>9.3f} {args.chains / t_g:>10.0f} "
            f"{t_v:>10.3f} {args.chains / t_v:>10.0f}"
        )

    if len(backends) == 2:
        g_np, t_gn, v_np, t_vn = results["numpy"]
        g_nb, t_gb, v_nb, t_vb = results["numba"]
        dev = max(
            float(np.max(np.abs(g_np - g_nb))), float(np.max(np.abs(v_np - v_nb)))
        )
        print(
            f"\nspeedup: guided {t_gn / t_gb:.1f}x, vanilla {t_vn / t_vb:.1f}x; "
            f"max endpoint |difference| {dev:.2e}"
        )
        if dev > 1e-9:
            raise SystemExit("backends disagree beyond 1e-9")


if __name__ == "__main__":
    main()
