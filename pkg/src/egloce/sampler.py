"""Deterministic denoising sampler with optional dual-energy guidance.

Chains integrate the deterministic (eta = 0) update

    z_prev = sqrt(abar_prev) * z0_est + sqrt(1 - abar_prev) * eps_pred

over N sampler steps mapped onto the T-step schedule, starting from a
standard normal draw. Sampler steps count down from N (noisiest) to 1; the
guidance window gates the dual-energy inner loop on those indices. After
the inner loop the step's clean estimate is recomputed from the corrected
latent with the step's (stale) noise prediction, so the final refinement
is the one carried forward.

``run_chain`` is the single-chain reference implementation. ``run_chains``
and ``vanilla_chains`` execute blocks of chains through a vectorized
backend (numba by default, pure numpy as fallback) and reproduce the
reference chain for each derived per-chain seed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backend as _backend
from .guidance import (
    GRAD_FULL,
    GuidanceConfig,
    cfg_combine,
    dual_energy_update,
)
from .schedule import NoiseSchedule, sampler_timesteps, step_alpha_bars
from .semantics import LatentDecoder, concept_space_from_world, text_embed

__all__ = [
    "DEFAULT_NUM_STEPS",
    "CHAIN_BLOCK",
    "StepRecord",
    "ChainResult",
    "NonFiniteLatentError",
    "tweedie_estimate",
    "ddim_step",
    "derive_chain_seed",
    "run_chain",
    "vanilla_chain",
    "run_chains",
    "vanilla_chains",
]

DEFAULT_NUM_STEPS = 50

# Chains are processed in fixed-size blocks regardless of worker count, so
# per-block float reductions (and therefore outputs) never depend on the
# level of parallelism.
CHAIN_BLOCK = 512


class NonFiniteLatentError(RuntimeError):
    """A chain latent left the finite range; carries the sampler step."""

    def __init__(self, step: int, chain_index: int = None):
        self.step = int(step)
        self.chain_index = chain_index
        where = f" (chain {chain_index})" if chain_index is not None else ""
        super().__init__(
            f"non-finite latent at sampler step {self.step}{where}"
        )


def tweedie_estimate(z_t, eps_pred, abar_t: float):
    """Posterior-mean estimate of the clean latent implied by a noise
    prediction: (z_t - sqrt(1 - abar) eps) / sqrt(abar)."""
    abar_t = float(abar_t)
    if not 0.0 < abar_t <= 1.0:
        raise ValueError("abar_t must lie in (0, 1]")
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    return (z_t - np.sqrt(1.0 - abar_t) * eps_pred) / np.sqrt(abar_t)


def ddim_step(z0_est, eps_pred, abar_prev: float):
    """Deterministic update to the previous noise level."""
    abar_prev = float(abar_prev)
    if not 0.0 < abar_prev <= 1.0:
        raise ValueError("abar_prev must lie in (0, 1]")
    z0_est = np.asarray(z0_est, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    return np.sqrt(abar_prev) * z0_est + np.sqrt(1.0 - abar_prev) * eps_pred


def derive_chain_seed(master_seed: int, chain_index: int) -> int:
    """Stable per-chain seed from the master seed and the chain's index."""
    ss = np.random.SeedSequence([int(master_seed), int(chain_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class StepRecord:
    """Per-step trajectory entry captured when requested."""

    step: int
    t: int
    z_t: np.ndarray
    z0_est: np.ndarray
    e_rep: float
    e_ret: float
    inner: tuple


@dataclass(frozen=True)
class ChainResult:
    final: np.ndarray
    seed: int
    guidance_calls: int
    prompt_id: str
    concept_id: str
    cfg: GuidanceConfig
    num_steps: int
    trajectory: tuple = None


def _check_window(cfg: GuidanceConfig, num_steps: int):
    if cfg.window is not None and cfg.window[1] > num_steps:
        raise ValueError(
            f"window {cfg.window} exceeds the {num_steps}-step sampler"
        )


def _resolve_semantics(world, space, decoder, tau: float = 1.0):
    decoder = decoder if decoder is not None else LatentDecoder()
    if space is None:
        space = concept_space_from_world(world, decoder, tau=tau)
    return space, decoder


def run_chain(
    world,
    prompt_id: str,
    concept_id,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    seed: int = None,
    *,
    num_steps: int = DEFAULT_NUM_STEPS,
    space=None,
    decoder=None,
    capture_trajectory: bool = False,
) -> ChainResult:
    """Run one guided chain and return its clean endpoint.

    ``concept_id`` is an anchor label or an iterable of labels naming the
    erased concept. Trajectory capture stores every step's latents and
    energies (also outside the window) plus the inner-loop diagnostics.
    """
    seed = cfg.seed if seed is None else int(seed)
    _check_window(cfg, num_steps)
    space, decoder = _resolve_semantics(world, space, decoder)
    prompt = world.prompt(prompt_id)
    uncond = world.blend
    e_p = text_embed(space, prompt.prompt_text)
    e_c = text_embed(space, concept_id)
    abars = step_alpha_bars(schedule, num_steps)

    rng = np.random.default_rng(seed)
    z = rng.standard_normal(world.dim)
    calls = 0
    records = [] if capture_trajectory else None
    taus = sampler_timesteps(schedule.num_steps, num_steps)

    for i in range(num_steps, 0, -1):
        a = float(abars[i])
        a_prev = float(abars[i - 1])
        cond_t = prompt.mixture.diffused(a)
        unc_t = uncond.diffused(a)
        eps = cfg_combine(unc_t.epsilon_pred(z, a), cond_t.epsilon_pred(z, a), cfg.omega)
        eps_fn = None
        if cfg.grad_mode == GRAD_FULL:
            eps_fn = lambda q: cfg_combine(  # noqa: E731
                unc_t.epsilon_pred(q, a), cond_t.epsilon_pred(q, a), cfg.omega
            )
        inner = []
        if cfg.gated(i):
            for _ in range(cfg.K):
                z, diag = dual_energy_update(
                    z, eps, a, e_p, e_c, cfg, space, decoder, eps_fn=eps_fn
                )
                calls += 1
                inner.append(diag)
        z0 = tweedie_estimate(z, eps, a)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(z0))):
            raise NonFiniteLatentError(step=i)
        if capture_trajectory:
            from .semantics import repulsion_energy, retention_energy

            records.append(
                StepRecord(
                    step=i,
                    t=int(taus[i - 1]),
                    z_t=z.copy(),
                    z0_est=z0.copy(),
                    e_rep=float(repulsion_energy(space, decoder, z0, e_c)),
                    e_ret=float(retention_energy(space, decoder, z0, e_p)),
                    inner=tuple(inner),
                )
            )
        z = ddim_step(z0, eps, a_prev)

    if not np.all(np.isfinite(z)):
        raise NonFiniteLatentError(step=0)
    return ChainResult(
        final=z,
        seed=seed,
        guidance_calls=calls,
        prompt_id=prompt_id,
        concept_id=text_embed(space, concept_id).label,
        cfg=cfg,
        num_steps=num_steps,
        trajectory=tuple(records) if capture_trajectory else None,
    )


def vanilla_chain(
    world,
    prompt_id: str,
    schedule: NoiseSchedule,
    omega: float,
    seed: int,
    *,
    num_steps: int = DEFAULT_NUM_STEPS,
) -> np.ndarray:
    """Plain guided chain with no energy terms; structurally the same float
    operations as ``run_chain`` outside the gated block."""
    prompt = world.prompt(prompt_id)
    uncond = world.blend
    abars = step_alpha_bars(schedule, num_steps)
    rng = np.random.default_rng(int(seed))
    z = rng.standard_normal(world.dim)
    for i in range(num_steps, 0, -1):
        a = float(abars[i])
        a_prev = float(abars[i - 1])
        cond_t = prompt.mixture.diffused(a)
        unc_t = uncond.diffused(a)
        eps = cfg_combine(unc_t.epsilon_pred(z, a), cond_t.epsilon_pred(z, a), float(omega))
        z0 = tweedie_estimate(z, eps, a)
        if not np.all(np.isfinite(z0)):
            raise NonFiniteLatentError(step=i)
        z = ddim_step(z0, eps, a_prev)
    return z


def _batch(
    world,
    prompt_id,
    schedule,
    cfg,
    master_seed,
    n,
    num_steps,
    space,
    decoder,
    workers,
    e_c_vector,
    vanilla,
    backend_name,
):
    n = int(n)
    if n < 1:
        raise ValueError("need at least one chain")
    workers = max(1, int(workers))
    prompt = world.prompt(prompt_id)
    d = world.dim
    z_T = np.empty((n, d))
    for i in range(n):
        z_T[i] = np.random.default_rng(derive_chain_seed(master_seed, i)).standard_normal(d)

    run_block = _backend.batch_runner(
        backend_name,
        world=world,
        prompt=prompt,
        schedule=schedule,
        cfg=cfg,
        num_steps=num_steps,
        space=space,
        decoder=decoder,
        e_c_vector=e_c_vector,
        vanilla=vanilla,
    )

    out = np.empty((n, d))
    fail = np.full(n, -1, dtype=np.int64)
    blocks = [(s, min(s + CHAIN_BLOCK, n)) for s in range(0, n, CHAIN_BLOCK)]

    def do(block):
        s, e = block
        res, bad = run_block(z_T[s:e])
        out[s:e] = res
        fail[s:e] = bad

    if workers == 1 or len(blocks) == 1:
        for b in blocks:
            do(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(do, blocks))

    if np.any(fail >= 0):
        idx = int(np.argmax(fail >= 0))
        raise NonFiniteLatentError(step=int(fail[idx]), chain_index=idx)
    return out


def run_chains(
    world,
    prompt_id: str,
    concept_id,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    master_seed: int,
    n: int,
    *,
    num_steps: int = DEFAULT_NUM_STEPS,
    space=None,
    decoder=None,
    workers: int = 1,
    backend: str = None,
) -> np.ndarray:
    """Endpoints of n guided chains seeded from ``master_seed``.

    Chain i reproduces ``run_chain(..., seed=derive_chain_seed(master_seed,
    i))``; outputs are a pure function of the configuration and master seed,
    independent of ``workers`` and block scheduling.
    """
    _check_window(cfg, num_steps)
    space, decoder = _resolve_semantics(world, space, decoder)
    e_c = text_embed(space, concept_id)
    return _batch(
        world,
        prompt_id,
        schedule,
        cfg,
        master_seed,
        n,
        num_steps,
        space,
        decoder,
        workers,
        e_c.vector,
        vanilla=False,
        backend_name=backend,
    )


def vanilla_chains(
    world,
    prompt_id: str,
    schedule: NoiseSchedule,
    omega: float,
    master_seed: int,
    n: int,
    *,
    num_steps: int = DEFAULT_NUM_STEPS,
    workers: int = 1,
    backend: str = None,
) -> np.ndarray:
    """Endpoints of n unguided chains; chain i matches ``vanilla_chain``."""
    space, decoder = _resolve_semantics(world, None, None)
    cfg = GuidanceConfig(omega=omega, window=None, K=0, lambda_rep=0.0, lambda_ret=0.0)
    return _batch(
        world,
        prompt_id,
        schedule,
        cfg,
        master_seed,
        n,
        num_steps,
        space,
        decoder,
        workers,
        np.zeros(space.num_anchors),
        vanilla=True,
        backend_name=backend,
    )
