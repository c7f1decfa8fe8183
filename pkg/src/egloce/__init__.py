"""Training-free concept erasure on analytic Gaussian-mixture latent worlds.

A deterministic denoising sampler steers its latents with two closed-form
energies, repulsion from an erased concept and retention of the prompt,
inside a gated step window. All reference quantities (densities, scores,
posterior means, safe distributions) have exact oracles, so the whole
pipeline is testable to tight tolerances.
"""

from .guidance import (
    GRAD_FULL,
    GRAD_STALE,
    GuidanceConfig,
    GuidanceDiagnostics,
    NonFiniteGradientError,
    cfg_combine,
    dual_energy_update,
    energy_step,
    negative_guidance_combine,
)
from .metrics import (
    MetricsReport,
    alignment,
    erased_mass,
    evaluate_batch,
    mode_mass,
    safe_tv,
    sliced_w2,
)
from .mixture import GaussianComponent, GaussianMixture, SampleBatch
from .sampler import (
    ChainResult,
    NonFiniteLatentError,
    ddim_step,
    derive_chain_seed,
    run_chain,
    run_chains,
    tweedie_estimate,
    vanilla_chain,
    vanilla_chains,
)
from .schedule import NoiseSchedule, build_linear, sampler_timesteps, step_alpha_bars
from .semantics import (
    ConceptSpace,
    LatentDecoder,
    TextEmbedding,
    concept_space_from_world,
    default_linear_decoder,
    energy_grad,
    feature_map,
    null_embedding,
    repulsion_energy,
    retention_energy,
    text_embed,
)
from .worlds import PromptSpec, World, default_world

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "NoiseSchedule",
    "build_linear",
    "sampler_timesteps",
    "step_alpha_bars",
    "GaussianComponent",
    "GaussianMixture",
    "SampleBatch",
    "PromptSpec",
    "World",
    "default_world",
    "ConceptSpace",
    "TextEmbedding",
    "LatentDecoder",
    "default_linear_decoder",
    "concept_space_from_world",
    "feature_map",
    "text_embed",
    "null_embedding",
    "repulsion_energy",
    "retention_energy",
    "energy_grad",
    "GuidanceConfig",
    "GuidanceDiagnostics",
    "NonFiniteGradientError",
    "GRAD_STALE",
    "GRAD_FULL",
    "cfg_combine",
    "negative_guidance_combine",
    "energy_step",
    "dual_energy_update",
    "ChainResult",
    "NonFiniteLatentError",
    "tweedie_estimate",
    "ddim_step",
    "derive_chain_seed",
    "run_chain",
    "vanilla_chain",
    "run_chains",
    "vanilla_chains",
    "MetricsReport",
    "erased_mass",
    "mode_mass",
    "safe_tv",
    "sliced_w2",
    "alignment",
    "evaluate_batch",
]
