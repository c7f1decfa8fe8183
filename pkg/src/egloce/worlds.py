"""Prompt-conditioned mixture worlds.

A world is a small set of prompts, each owning a Gaussian mixture over a
shared latent space. The unconditional distribution is the equal-weight
blend of the prompt mixtures. Component labels are unique across the blend
and double as the vocabulary for concept embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mixture import GaussianComponent, GaussianMixture

__all__ = ["PromptSpec", "World", "default_world"]


@dataclass(frozen=True)
class PromptSpec:
    """One prompt: an id, its conditional mixture, one label per component.

    ``text_labels`` names the components the prompt's text actually
    mentions; the prompt embedding is built from these. A text prompt is
    not an inventory of everything the conditional distribution produces,
    so the named set is usually a strict subset of the components. None
    means the text names every component.
    """

    prompt_id: str
    mixture: GaussianMixture
    labels: tuple
    text_labels: tuple = None

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if not self.prompt_id:
            raise ValueError("prompt_id must be nonempty")
        if len(labels) != self.mixture.num_components:
            raise ValueError("need exactly one label per component")
        object.__setattr__(self, "labels", labels)
        if self.text_labels is not None:
            text = tuple(str(x) for x in self.text_labels)
            unknown = [t for t in text if t not in labels]
            if unknown:
                raise ValueError(f"text labels {unknown} not among components")
            if not text:
                raise ValueError("text_labels must be None or nonempty")
            object.__setattr__(self, "text_labels", text)

    @property
    def prompt_text(self) -> tuple:
        """Labels the prompt embedding is built over."""
        return self.labels if self.text_labels is None else self.text_labels

    @property
    def unsafe_labels(self) -> tuple:
        return tuple(
            lab
            for lab, bad in zip(self.labels, self.mixture.unsafe_mask)
            if bad
        )


@dataclass(frozen=True)
class World:
    prompts: tuple

    def __post_init__(self):
        prompts = tuple(self.prompts)
        if not prompts:
            raise ValueError("world needs at least one prompt")
        ids = [p.prompt_id for p in prompts]
        if len(set(ids)) != len(ids):
            raise ValueError("prompt ids must be unique")
        dims = {p.mixture.dim for p in prompts}
        if len(dims) != 1:
            raise ValueError("all prompts must share one latent dimension")
        labels = [lab for p in prompts for lab in p.labels]
        if len(set(labels)) != len(labels):
            raise ValueError("component labels must be unique across the world")
        object.__setattr__(self, "prompts", prompts)

    @property
    def dim(self) -> int:
        return self.prompts[0].mixture.dim

    @property
    def labels(self) -> tuple:
        return tuple(lab for p in self.prompts for lab in p.labels)

    def prompt(self, prompt_id: str) -> PromptSpec:
        for p in self.prompts:
            if p.prompt_id == prompt_id:
                return p
        raise KeyError(f"unknown prompt id {prompt_id!r}")

    @cached_property
    def blend(self) -> GaussianMixture:
        """Unconditional mixture: prompts blended with equal probability."""
        P = len(self.prompts)
        return GaussianMixture(
            weights=np.concatenate([p.mixture.weights / P for p in self.prompts]),
            means=np.concatenate([p.mixture.means for p in self.prompts]),
            variances=np.concatenate([p.mixture.variances for p in self.prompts]),
            unsafe_mask=np.concatenate(
                [p.mixture.unsafe_mask for p in self.prompts]
            ),
        )


def default_world() -> World:
    """Four unit-variance modes at (+-3, +-3) under a single prompt "p",
    equal weights, with the mode at (3, 3) marked unsafe.

    The prompt's text names exactly the unsafe mode: the adversarial
    setting where the user asks for the concept under erasure. Repulsion
    and retention then pull on the same embedding in opposite directions,
    so retention acts as a measured counterweight rather than a separate
    objective. Prompts whose text names several modes turn the retention
    term into a uniformizer over the named set, which drains the unnamed
    mode and helps erasure instead of opposing it.
    """
    corners = [(3.0, 3.0), (-3.0, 3.0), (-3.0, -3.0), (3.0, -3.0)]
    comps = [
        GaussianComponent(
            weight=0.25,
            mean=np.array(c),
            cov_diag=np.ones(2),
            unsafe=(i == 0),
        )
        for i, c in enumerate(corners)
    ]
    spec = PromptSpec(
        prompt_id="p",
        mixture=GaussianMixture.from_components(comps),
        labels=tuple(f"m{i}" for i in range(4)),
        text_labels=("m0",),
    )
    return World(prompts=(spec,))
