"""Backend selection for the batched chain integrator.

Two implementations of the same block kernels exist: a numba-compiled one
(default when numba imports cleanly) and a pure-numpy one. The environment
variable ``EGLOCE_BACKEND`` picks between them globally ("auto", "numba",
"numpy"); call sites may also override per call.
"""

from __future__ import annotations

import os

import numpy as np

from .guidance import FD_STEP, GRAD_FULL
from .schedule import step_alpha_bars
from .semantics import text_embed

__all__ = ["BACKEND_ENV", "active_backend", "batch_runner", "warmup"]

BACKEND_ENV = "EGLOCE_BACKEND"

_NUMBA_IMPORT_ERROR = None


def _numba_module():
    global _NUMBA_IMPORT_ERROR
    try:
        from . import _chain_numba

        return _chain_numba
    except ImportError as exc:  # pragma: no cover - depends on environment
        _NUMBA_IMPORT_ERROR = exc
        return None


def active_backend(name: str = None) -> str:
    """Resolve a backend name ("numba" or "numpy") from the argument or the
    EGLOCE_BACKEND environment variable."""
    name = name or os.environ.get(BACKEND_ENV, "auto")
    name = name.strip().lower()
    if name in ("", "auto"):
        return "numba" if _numba_module() is not None else "numpy"
    if name == "numpy":
        return "numpy"
    if name == "numba":
        if _numba_module() is None:
            raise RuntimeError(
                f"numba backend requested but unavailable: {_NUMBA_IMPORT_ERROR}"
            )
        return "numba"
    raise ValueError(f"unknown backend {name!r}; use auto, numba, or numpy")


def _load(name: str):
    if active_backend(name) == "numba":
        return _numba_module()
    from . import _chain_numpy

    return _chain_numpy


def batch_runner(
    name,
    *,
    world,
    prompt,
    schedule,
    cfg,
    num_steps,
    space,
    decoder,
    e_c_vector,
    vanilla,
):
    """Bind a configuration to a block kernel.

    Returns ``run(z_T_block) -> (finals, fail_steps)`` where ``fail_steps``
    is -1 per chain or the sampler step at which the latent went non-finite.
    """
    mod = _load(name)
    abars = np.ascontiguousarray(step_alpha_bars(schedule, num_steps))
    cond = prompt.mixture
    unc = world.blend
    cw = np.ascontiguousarray(cond.weights)
    cmu = np.ascontiguousarray(cond.means)
    cvar = np.ascontiguousarray(cond.variances)
    uw = np.ascontiguousarray(unc.weights)
    umu = np.ascontiguousarray(unc.means)
    uvar = np.ascontiguousarray(unc.variances)
    omega = float(cfg.omega)

    if vanilla:
        def run(z_block):
            return mod.vanilla_block(
                np.ascontiguousarray(z_block), abars, cw, cmu, cvar, uw, umu, uvar, omega
            )

        return run

    window = cfg.window if cfg.window is not None else (0, -1)
    anchors = np.ascontiguousarray(space.anchors)
    e_p = np.ascontiguousarray(text_embed(space, prompt.prompt_text).vector)
    e_c = np.ascontiguousarray(e_c_vector, dtype=np.float64)
    has_dec = decoder.matrix is not None
    dec = np.ascontiguousarray(decoder.matrix) if has_dec else np.zeros((0, 0))

    def run(z_block):
        return mod.guided_block(
            np.ascontiguousarray(z_block),
            abars,
            cw,
            cmu,
            cvar,
            uw,
            umu,
            uvar,
            omega,
            float(cfg.lambda_rep),
            float(cfg.lambda_ret),
            int(cfg.K),
            int(window[0]),
            int(window[1]),
            cfg.grad_mode == GRAD_FULL,
            anchors,
            float(space.tau),
            e_c,
            e_p,
            dec,
            has_dec,
            FD_STEP,
            bool(cfg.normalize_grad),
        )

    return run


def warmup(name: str = None) -> str:
    """Force kernel compilation with a tiny block; returns the backend used."""
    from .guidance import GuidanceConfig
    from .worlds import default_world
    from .schedule import build_linear
    from .semantics import LatentDecoder, concept_space_from_world, text_embed as _te

    resolved = active_backend(name)
    world = default_world()
    schedule = build_linear(20, 1e-4, 0.02)
    decoder = LatentDecoder()
    space = concept_space_from_world(world, decoder)
    cfg = GuidanceConfig(window=(2, 3), K=1, lambda_rep=1e-3, lambda_ret=5e-4)
    for mode_cfg in (cfg, cfg.with_(grad_mode=GRAD_FULL)):
        run = batch_runner(
            resolved,
            world=world,
            prompt=world.prompt("p"),
            schedule=schedule,
            cfg=mode_cfg,
            num_steps=10,
            space=space,
            decoder=decoder,
            e_c_vector=_te(space, "m0").vector,
            vanilla=False,
        )
        run(np.zeros((2, world.dim)))
    run = batch_runner(
        resolved,
        world=world,
        prompt=world.prompt("p"),
        schedule=schedule,
        cfg=cfg,
        num_steps=10,
        space=space,
        decoder=decoder,
        e_c_vector=_te(space, "m0").vector,
        vanilla=True,
    )
    run(np.zeros((2, world.dim)))
    return resolved
