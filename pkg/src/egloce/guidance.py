"""Classifier-free guidance combinators and the dual-energy latent update.

The dual-energy update is the inner loop of the erasure sampler: estimate
the clean latent from the current noisy one, evaluate a repulsion energy
against the erased concept and a retention energy against the prompt, and
step the noisy latent down the combined gradient. In the default
stale-epsilon mode the noise prediction is held fixed inside the inner
loop, so the gradient through the clean-latent estimate is the energy
gradient scaled by 1/sqrt(abar_t). The full-chain mode instead recomputes
the noise prediction inside the energy and differentiates the whole scalar
by central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import semantics

__all__ = [
    "GRAD_STALE",
    "GRAD_FULL",
    "FD_STEP",
    "GuidanceConfig",
    "GuidanceDiagnostics",
    "EnergyTerm",
    "NonFiniteGradientError",
    "cfg_combine",
    "negative_guidance_combine",
    "energy_step",
    "repulsion_term",
    "retention_term",
    "quadratic_term",
    "dual_energy_update",
]

GRAD_STALE = "stale-epsilon"
GRAD_FULL = "full-chain"

# Central-difference step for full-chain mode; latents here are O(1).
FD_STEP = 1e-5

# Reference inner-loop step sizes. These suit feature maps whose energies
# vary on an O(1) scale; the shipped configs carry values calibrated to the
# default analytic world instead (see docs/calibration.md).
DEFAULT_LAMBDA_REP = 10.0
DEFAULT_LAMBDA_RET = 5.0


class NonFiniteGradientError(RuntimeError):
    """Raised when an energy gradient evaluates to NaN or infinity."""


@dataclass(frozen=True)
class GuidanceConfig:
    """Knobs for one guided run.

    ``window`` bounds the gated sampler steps (inclusive, counted in sampler
    steps where step N is the noisiest); ``None`` disables gating entirely.
    ``K`` is the number of inner refinement iterations per gated step.
    """

    omega: float = 7.5
    lambda_rep: float = DEFAULT_LAMBDA_REP
    lambda_ret: float = DEFAULT_LAMBDA_RET
    K: int = 3
    window: tuple = (20, 35)
    grad_mode: str = GRAD_STALE
    normalize_grad: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "lambda_rep", float(self.lambda_rep))
        object.__setattr__(self, "lambda_ret", float(self.lambda_ret))
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "seed", int(self.seed))
        if not np.isfinite(self.omega):
            raise ValueError("omega must be finite")
        if not (np.isfinite(self.lambda_rep) and self.lambda_rep >= 0.0):
            raise ValueError("lambda_rep must be a finite nonnegative real")
        if not (np.isfinite(self.lambda_ret) and self.lambda_ret >= 0.0):
            raise ValueError("lambda_ret must be a finite nonnegative real")
        if self.K < 0:
            raise ValueError("K must be a nonnegative integer")
        if self.grad_mode not in (GRAD_STALE, GRAD_FULL):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.window is not None:
            lo, hi = (int(v) for v in self.window)
            if not 1 <= lo <= hi:
                raise ValueError("window must satisfy 1 <= t_start <= t_end")
            object.__setattr__(self, "window", (lo, hi))

    def gated(self, step: int) -> bool:
        """Whether sampler step ``step`` falls inside the guidance window."""
        if self.window is None:
            return False
        lo, hi = self.window
        return lo <= int(step) <= hi

    def with_(self, **kwargs) -> "GuidanceConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class GuidanceDiagnostics:
    """Energies at the pre-update clean estimate and the applied step norm."""

    e_rep: float
    e_ret: float
    grad_norm: float


def cfg_combine(eps_uncond, eps_cond, omega: float):
    """Classifier-free combination: uncond plus omega times the cond gap."""
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError("noise predictions must share a shape")
    return eps_uncond + float(omega) * (eps_cond - eps_uncond)


def negative_guidance_combine(eps_uncond, eps_concept, omega: float):
    """Steer away from a concept by flipping the guidance gap's endpoint."""
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_concept = np.asarray(eps_concept, dtype=np.float64)
    if eps_uncond.shape != eps_concept.shape:
        raise ValueError("noise predictions must share a shape")
    return eps_uncond - float(omega) * (eps_concept - eps_uncond)


def energy_step(z, grad, rho: float):
    """Plain descent step ``z - rho * grad``."""
    z = np.asarray(z, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if z.shape != grad.shape:
        raise ValueError("latent and gradient must share a shape")
    return z - float(rho) * grad


@dataclass(frozen=True)
class EnergyTerm:
    """A scalar energy over clean latents with its exact gradient."""

    value: object
    grad: object


def repulsion_term(space, decoder, e_c) -> EnergyTerm:
    return EnergyTerm(
        value=lambda z0: float(semantics.repulsion_energy(space, decoder, z0, e_c)),
        grad=lambda z0: semantics.energy_grad(space, decoder, z0, e_c, sign=1.0),
    )


def retention_term(space, decoder, e_p) -> EnergyTerm:
    return EnergyTerm(
        value=lambda z0: float(semantics.retention_energy(space, decoder, z0, e_p)),
        grad=lambda z0: semantics.energy_grad(space, decoder, z0, e_p, sign=-1.0),
    )


def quadratic_term(center) -> EnergyTerm:
    """Squared distance to a fixed point; handy as a test energy with a
    known descent rate."""
    center = np.asarray(center, dtype=np.float64)
    return EnergyTerm(
        value=lambda z0: float(np.sum((z0 - center) ** 2)),
        grad=lambda z0: 2.0 * (z0 - center),
    )


def dual_energy_update(
    z_t,
    eps_pred,
    abar_t: float,
    e_p,
    e_c,
    cfg: GuidanceConfig,
    space=None,
    decoder=None,
    *,
    rep_term: EnergyTerm = None,
    ret_term: EnergyTerm = None,
    eps_fn=None,
):
    """One inner-loop correction of the noisy latent at a gated step.

    Returns ``(z_new, diagnostics)``. ``eps_pred`` is the noise prediction
    computed at the top of the sampler step; stale-epsilon mode keeps it
    fixed, so the update is

        z_new = z_t - (lambda_rep g_rep + lambda_ret g_ret) / sqrt(abar_t)

    with both gradients taken at the clean estimate. Full-chain mode needs
    ``eps_fn`` (latent -> noise prediction at this step) and differentiates
    the combined scalar energy by central differences.

    Custom ``rep_term``/``ret_term`` override the concept energies, e.g. to
    substitute an analytic test energy; otherwise ``space``/``decoder`` with
    the two embeddings define them.
    """
    from .sampler import tweedie_estimate

    z_t = np.asarray(z_t, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    abar_t = float(abar_t)
    if z_t.ndim != 1 or z_t.shape != eps_pred.shape:
        raise ValueError("z_t and eps_pred must be matching vectors")
    if not 0.0 < abar_t <= 1.0:
        raise ValueError("abar_t must lie in (0, 1]")
    if rep_term is None:
        rep_term = repulsion_term(space, decoder, e_c)
    if ret_term is None:
        ret_term = retention_term(space, decoder, e_p)

    if cfg.grad_mode == GRAD_STALE:
        z0 = tweedie_estimate(z_t, eps_pred, abar_t)
        e_rep = rep_term.value(z0)
        e_ret = ret_term.value(z0)
        g_rep = rep_term.grad(z0)
        g_ret = ret_term.grad(z0)
        # d z0 / d z_t = 1/sqrt(abar) when eps_pred is held fixed.
        grad = (cfg.lambda_rep * g_rep + cfg.lambda_ret * g_ret) / np.sqrt(abar_t)
    else:
        if eps_fn is None:
            raise ValueError("full-chain mode needs eps_fn")

        def combined(z):
            z0 = tweedie_estimate(z, eps_fn(z), abar_t)
            return cfg.lambda_rep * rep_term.value(z0) + cfg.lambda_ret * ret_term.value(z0)

        z0 = tweedie_estimate(z_t, eps_fn(z_t), abar_t)
        e_rep = rep_term.value(z0)
        e_ret = ret_term.value(z0)
        grad = np.empty_like(z_t)
        for j in range(z_t.size):
            zp = z_t.copy()
            zp[j] += FD_STEP
            zm = z_t.copy()
            zm[j] -= FD_STEP
            grad[j] = (combined(zp) - combined(zm)) / (2.0 * FD_STEP)

    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("energy gradient is not finite")
    if cfg.normalize_grad:
        norm = float(np.sqrt(np.sum(grad * grad)))
        if norm > 0.0:
            grad = grad / norm
    z_new = energy_step(z_t, grad, 1.0)
    diag = GuidanceDiagnostics(
        e_rep=float(e_rep),
        e_ret=float(e_ret),
        grad_norm=float(np.sqrt(np.sum(grad * grad))),
    )
    return z_new, diag
