"""JSON experiment configuration: parsing, validation, sweep expansion,
and stable config hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .guidance import GRAD_FULL, GRAD_STALE, GuidanceConfig
from .mixture import GaussianComponent, GaussianMixture
from .schedule import NoiseSchedule, build_linear
from .semantics import (
    ConceptSpace,
    LatentDecoder,
    concept_space_from_world,
    default_linear_decoder,
)
from .worlds import PromptSpec, World

__all__ = [
    "SPEC_VERSION",
    "ConfigError",
    "SweepSpec",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "default_config_dict",
]

SPEC_VERSION = 1

SWEEP_AXES = ("K", "lambda", "window", "grad_mode")


class ConfigError(ValueError):
    """A configuration file failed validation."""


def _need(mapping, key, where):
    if key not in mapping:
        raise ConfigError(f"missing key {key!r} in {where}")
    return mapping[key]


def _opt(mapping, key, default):
    return mapping.get(key, default) if isinstance(mapping, dict) else default


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
        values = tuple(self.values)
        if not values:
            raise ConfigError("sweep values must be nonempty")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment: world, schedule, semantics, guidance, run."""

    world: World
    schedule: NoiseSchedule
    schedule_T: int
    beta_start: float
    beta_end: float
    num_steps: int
    guidance: GuidanceConfig
    space: ConceptSpace
    decoder: LatentDecoder
    chains: int
    master_seed: int
    prompt_id: str
    concept: tuple
    capture_trajectory: bool = False
    svg: bool = False
    sweep: SweepSpec = None

    def effective_dict(self) -> dict:
        """Canonical plain-data view of the resolved configuration (sweep
        already applied); the basis for the config hash."""
        prompts = []
        for p in self.world.prompts:
            comps = []
            mix = p.mixture
            for i in range(mix.num_components):
                comps.append(
                    {
                        "weight": float(mix.weights[i]),
                        "mean": [float(v) for v in mix.means[i]],
                        "var": [float(v) for v in mix.variances[i]],
                        "unsafe": bool(mix.unsafe_mask[i]),
                        "label": p.labels[i],
                    }
                )
            prompts.append(
                {
                    "id": p.prompt_id,
                    "text": list(p.prompt_text),
                    "components": comps,
                }
            )
        dec = (
            "identity"
            if self.decoder.matrix is None
            else [[float(v) for v in row] for row in self.decoder.matrix]
        )
        window = self.guidance.window
        return {
            "spec_version": SPEC_VERSION,
            "world": {"prompts": prompts},
            "schedule": {
                "T": self.schedule_T,
                "beta_start": self.beta_start,
                "beta_end": self.beta_end,
            },
            "semantics": {
                "tau": self.space.tau,
                "anchors": [[float(v) for v in row] for row in self.space.anchors],
                "anchor_labels": list(self.space.labels),
                "decoder": dec,
            },
            "guidance": {
                "omega": self.guidance.omega,
                "lambda_rep": self.guidance.lambda_rep,
                "lambda_ret": self.guidance.lambda_ret,
                "K": self.guidance.K,
                "window": list(window) if window is not None else None,
                "grad_mode": self.guidance.grad_mode,
                "normalize_grad": self.guidance.normalize_grad,
            },
            "sampler": {
                "steps": self.num_steps,
                "capture_trajectory": self.capture_trajectory,
            },
            "run": {
                "chains": self.chains,
                "master_seed": self.master_seed,
                "prompt": self.prompt_id,
                "concept": list(self.concept),
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.effective_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def apply_sweep_value(self, value):
        """Resolve one sweep point; returns (tag, config-without-sweep)."""
        if self.sweep is None:
            raise ConfigError("configuration has no sweep block")
        axis = self.sweep.axis
        g = self.guidance
        if axis == "K":
            k = int(value)
            return f"K{k}", replace(self, guidance=g.with_(K=k), sweep=None)
        if axis == "lambda":
            if isinstance(value, (list, tuple)):
                if len(value) != 2:
                    raise ConfigError("lambda sweep pairs must be [rep, ret]")
                rep, ret = (float(v) for v in value)
                tag = f"lam{rep:g}-{ret:g}"
            else:
                scale = float(value)
                rep = scale * g.lambda_rep
                ret = scale * g.lambda_ret
                tag = f"lam{scale:g}x"
            return tag, replace(
                self, guidance=g.with_(lambda_rep=rep, lambda_ret=ret), sweep=None
            )
        if axis == "window":
            if value is None:
                return "winoff", replace(self, guidance=g.with_(window=None), sweep=None)
            lo, hi = (int(v) for v in value)
            return f"win{lo}-{hi}", replace(
                self, guidance=g.with_(window=(lo, hi)), sweep=None
            )
        mode = str(value)
        if mode not in (GRAD_STALE, GRAD_FULL):
            raise ConfigError(f"unknown grad_mode {mode!r} in sweep values")
        return mode, replace(self, guidance=g.with_(grad_mode=mode), sweep=None)

    def sweep_points(self):
        """(tag, resolved config) for every sweep value."""
        if self.sweep is None:
            raise ConfigError("configuration has no sweep block")
        points = [self.apply_sweep_value(v) for v in self.sweep.values]
        tags = [t for t, _ in points]
        if len(set(tags)) != len(tags):
            raise ConfigError("sweep values produce duplicate tags")
        return points


def _parse_component(entry, where) -> GaussianComponent:
    mean = np.asarray(_need(entry, "mean", where), dtype=np.float64)
    var = _need(entry, "var", where)
    if np.isscalar(var):
        var = np.full(mean.shape, float(var))
    else:
        var = np.asarray(var, dtype=np.float64)
    try:
        return GaussianComponent(
            weight=float(_need(entry, "weight", where)),
            mean=mean,
            cov_diag=var,
            unsafe=bool(_opt(entry, "unsafe", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_world(section) -> World:
    prompts = _need(section, "prompts", "world")
    if not isinstance(prompts, list) or not prompts:
        raise ConfigError("world.prompts must be a nonempty list")
    specs = []
    for p in prompts:
        pid = str(_need(p, "id", "world.prompts[]"))
        comp_entries = _need(p, "components", f"prompt {pid!r}")
        if not isinstance(comp_entries, list) or not comp_entries:
            raise ConfigError(f"prompt {pid!r} needs a nonempty component list")
        comps = []
        labels = []
        for j, entry in enumerate(comp_entries):
            where = f"prompt {pid!r} component {j}"
            comps.append(_parse_component(entry, where))
            labels.append(str(_opt(entry, "label", f"{pid}.{j}")))
        text = _opt(p, "text", None)
        if text is not None:
            if isinstance(text, str):
                text = [text]
            text = tuple(str(t) for t in text)
        try:
            mixture = GaussianMixture.from_components(comps)
            specs.append(
                PromptSpec(
                    prompt_id=pid,
                    mixture=mixture,
                    labels=tuple(labels),
                    text_labels=text,
                )
            )
        except ValueError as exc:
            raise ConfigError(f"prompt {pid!r}: {exc}") from exc
    try:
        return World(prompts=tuple(specs))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_decoder(spec) -> LatentDecoder:
    if spec is None or spec == "identity":
        return LatentDecoder()
    try:
        if spec == "linear":
            return default_linear_decoder()
        if isinstance(spec, list):
            return LatentDecoder(matrix=np.asarray(spec, dtype=np.float64))
    except ValueError as exc:
        raise ConfigError(f"semantics.decoder: {exc}") from exc
    raise ConfigError(
        "semantics.decoder must be 'identity', 'linear', or a matrix"
    )


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    version = _need(data, "spec_version", "configuration")
    if version != SPEC_VERSION:
        raise ConfigError(f"unsupported spec_version {version!r}")

    world = _parse_world(_need(data, "world", "configuration"))

    sched = _opt(data, "schedule", {})
    T = int(_opt(sched, "T", 1000))
    beta_start = float(_opt(sched, "beta_start", 1e-4))
    beta_end = float(_opt(sched, "beta_end", 0.02))
    n_sched = _opt(sched, "N", None)
    sampler_sec = _opt(data, "sampler", {})
    n_sampler = _opt(sampler_sec, "steps", None)
    if n_sched is not None and n_sampler is not None and int(n_sched) != int(n_sampler):
        raise ConfigError("schedule.N and sampler.steps disagree")
    num_steps = int(n_sched if n_sched is not None else (n_sampler if n_sampler is not None else 50))
    try:
        schedule = build_linear(T, beta_start, beta_end)
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    if not 1 <= num_steps <= T:
        raise ConfigError("sampler steps must lie in [1, T]")

    sem = _opt(data, "semantics", {})
    tau = float(_opt(sem, "tau", 1.0))
    decoder = _parse_decoder(_opt(sem, "decoder", "identity"))
    anchors_spec = _opt(sem, "anchors", "from-world")
    try:
        if anchors_spec == "from-world":
            space = concept_space_from_world(world, decoder, tau=tau)
        elif isinstance(anchors_spec, dict):
            space = ConceptSpace(
                anchors=np.asarray(_need(anchors_spec, "points", "semantics.anchors")),
                tau=tau,
                labels=tuple(_need(anchors_spec, "labels", "semantics.anchors")),
            )
        else:
            raise ConfigError(
                "semantics.anchors must be 'from-world' or {labels, points}"
            )
    except ValueError as exc:
        raise ConfigError(f"semantics: {exc}") from exc

    gsec = _opt(data, "guidance", {})
    window = _opt(gsec, "window", (20, 35))
    if window is not None:
        window = tuple(int(v) for v in window)
    try:
        guidance = GuidanceConfig(
            omega=float(_opt(gsec, "omega", 7.5)),
            lambda_rep=float(_opt(gsec, "lambda_rep", GuidanceConfig().lambda_rep)),
            lambda_ret=float(_opt(gsec, "lambda_ret", GuidanceConfig().lambda_ret)),
            K=int(_opt(gsec, "K", 3)),
            window=window,
            grad_mode=str(_opt(gsec, "grad_mode", GRAD_STALE)),
            normalize_grad=bool(_opt(gsec, "normalize_grad", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"guidance: {exc}") from exc
    if guidance.window is not None and guidance.window[1] > num_steps:
        raise ConfigError(
            f"guidance window {guidance.window} exceeds the {num_steps}-step sampler"
        )

    run = _opt(data, "run", {})
    chains = int(_opt(run, "chains", 1000))
    if chains < 1:
        raise ConfigError("run.chains must be >= 1")
    master_seed = int(_opt(run, "master_seed", 0))
    prompt_id = str(_opt(run, "prompt", world.prompts[0].prompt_id))
    try:
        world.prompt(prompt_id)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    concept = _opt(run, "concept", None)
    if concept is None:
        concept = world.prompt(prompt_id).unsafe_labels
        if not concept:
            raise ConfigError(
                "run.concept missing and the prompt has no unsafe component"
            )
    if isinstance(concept, str):
        concept = (concept,)
    concept = tuple(str(c) for c in concept)
    for label in concept:
        try:
            space.label_index(label)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc

    sweep_sec = _opt(data, "sweep", None)
    sweep = None
    if sweep_sec is not None:
        sweep = SweepSpec(
            axis=str(_need(sweep_sec, "axis", "sweep")),
            values=tuple(_need(sweep_sec, "values", "sweep")),
        )

    out_sec = _opt(data, "output", {})

    cfg = ExperimentConfig(
        world=world,
        schedule=schedule,
        schedule_T=T,
        beta_start=beta_start,
        beta_end=beta_end,
        num_steps=num_steps,
        guidance=guidance,
        space=space,
        decoder=decoder,
        chains=chains,
        master_seed=master_seed,
        prompt_id=prompt_id,
        concept=concept,
        capture_trajectory=bool(_opt(sampler_sec, "capture_trajectory", False)),
        svg=bool(_opt(out_sec, "svg", False)),
        sweep=sweep,
    )
    if sweep is not None:
        cfg.sweep_points()  # validates every value eagerly
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return parse_config(data)


def default_config_dict() -> dict:
    """The stock experiment: default world, schedule, and calibrated
    guidance (step sizes and feature temperature per docs/calibration.md)."""
    return {
        "spec_version": SPEC_VERSION,
        "world": {
            "prompts": [
                {
                    "id": "p",
                    "text": ["m0"],
                    "components": [
                        {"weight": 0.25, "mean": [3.0, 3.0], "var": 1.0, "unsafe": True, "label": "m0"},
                        {"weight": 0.25, "mean": [-3.0, 3.0], "var": 1.0, "label": "m1"},
                        {"weight": 0.25, "mean": [-3.0, -3.0], "var": 1.0, "label": "m2"},
                        {"weight": 0.25, "mean": [3.0, -3.0], "var": 1.0, "label": "m3"},
                    ],
                }
            ]
        },
        "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02, "N": 50},
        "semantics": {"tau": 4.0, "anchors": "from-world", "decoder": "identity"},
        "guidance": {
            "omega": 7.5,
            "lambda_rep": 0.2,
            "lambda_ret": 0.175,
            "K": 3,
            "window": [20, 35],
            "grad_mode": GRAD_STALE,
        },
        "sampler": {"steps": 50, "capture_trajectory": False},
        "run": {"chains": 5000, "master_seed": 20260814, "prompt": "p", "concept": "m0"},
        "output": {"svg": False},
    }
