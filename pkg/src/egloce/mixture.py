"""Gaussian-mixture latent distributions with exact densities, scores,
responsibilities, and diffused marginals.

Components carry diagonal covariances only, so every per-component quantity
factors across dimensions and the score has the closed form

    score(z) = sum_k r_k(z) * (mu_k - z) / var_k

with r_k the posterior component responsibilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MIN_VARIANCE",
    "GaussianComponent",
    "GaussianMixture",
    "SampleBatch",
]

MIN_VARIANCE = 1e-8

_LOG_2PI = float(np.log(2.0 * np.pi))


def _as_readonly(a, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GaussianComponent:
    """One mixture component: weight, mean vector, diagonal covariance."""

    weight: float
    mean: np.ndarray
    cov_diag: np.ndarray
    unsafe: bool = False

    def __post_init__(self):
        weight = float(self.weight)
        mean = _as_readonly(self.mean)
        cov = _as_readonly(self.cov_diag)
        if not 0.0 < weight <= 1.0:
            raise ValueError("component weight must lie in (0, 1]")
        if mean.ndim != 1 or mean.size == 0:
            raise ValueError("mean must be a nonempty vector")
        if cov.shape != mean.shape:
            raise ValueError("cov_diag must match the mean's shape")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("component parameters must be finite")
        if np.any(cov < MIN_VARIANCE):
            raise ValueError(f"variances below {MIN_VARIANCE} are rejected")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_diag", cov)
        object.__setattr__(self, "unsafe", bool(self.unsafe))


@dataclass(frozen=True)
class SampleBatch:
    """A batch of latent points plus the seed and origin that produced it."""

    points: np.ndarray
    seed: int
    provenance: str = "direct-sample"

    def __post_init__(self):
        points = _as_readonly(self.points)
        if points.ndim != 2 or points.shape[0] == 0:
            raise ValueError("points must be a nonempty (n, d) array")
        if not np.all(np.isfinite(points)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "seed", int(self.seed))

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class GaussianMixture:
    """Finite Gaussian mixture over R^d with diagonal covariances.

    ``weights`` must be strictly positive and sum to 1 within 1e-12;
    ``unsafe_mask`` marks the components belonging to the erased concept.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    unsafe_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        weights = _as_readonly(self.weights)
        means = _as_readonly(self.means)
        variances = _as_readonly(self.variances)
        if weights.ndim != 1 or weights.size == 0:
            raise ValueError("weights must be a nonempty vector")
        k = weights.size
        if means.ndim != 2 or means.shape[0] != k:
            raise ValueError("means must be a (k, d) array")
        if variances.shape != means.shape:
            raise ValueError("variances must match means in shape")
        if not (
            np.all(np.isfinite(weights))
            and np.all(np.isfinite(means))
            and np.all(np.isfinite(variances))
        ):
            raise ValueError("mixture parameters must be finite")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be strictly positive")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        if np.any(variances < MIN_VARIANCE):
            raise ValueError(f"variances below {MIN_VARIANCE} are rejected")
        if self.unsafe_mask is None:
            mask = np.zeros(k, dtype=bool)
        else:
            mask = np.ascontiguousarray(self.unsafe_mask, dtype=bool)
        if mask.shape != (k,):
            raise ValueError("unsafe_mask must be a (k,) boolean vector")
        mask.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "unsafe_mask", mask)

    @classmethod
    def from_components(cls, components) -> "GaussianMixture":
        components = tuple(components)
        if not components:
            raise ValueError("need at least one component")
        return cls(
            weights=np.array([c.weight for c in components]),
            means=np.stack([c.mean for c in components]),
            variances=np.stack([c.cov_diag for c in components]),
            unsafe_mask=np.array([c.unsafe for c in components], dtype=bool),
        )

    @property
    def num_components(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def components(self) -> tuple:
        return tuple(
            GaussianComponent(
                weight=float(self.weights[i]),
                mean=self.means[i],
                cov_diag=self.variances[i],
                unsafe=bool(self.unsafe_mask[i]),
            )
            for i in range(self.num_components)
        )

    # -- sampling ---------------------------------------------------------

    def sample(self, n: int, seed: int) -> SampleBatch:
        """Draw n exact samples: component choice, then Gaussian noise."""
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(int(seed))
        idx = rng.choice(self.num_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        points = self.means[idx] + np.sqrt(self.variances[idx]) * noise
        return SampleBatch(points=points, seed=int(seed))

    # -- diffusion --------------------------------------------------------

    def diffused(self, abar: float) -> "GaussianMixture":
        """Marginal of sqrt(abar) * z0 + sqrt(1 - abar) * eps, z0 ~ self.

        Each component maps to N(sqrt(abar) mu, abar var + (1 - abar));
        weights and the unsafe mask are unchanged. ``abar == 1`` is the
        identity bit-exactly.
        """
        abar = float(abar)
        if not 0.0 < abar <= 1.0:
            raise ValueError("abar must lie in (0, 1]")
        return GaussianMixture(
            weights=self.weights,
            means=np.sqrt(abar) * self.means,
            variances=abar * self.variances + (1.0 - abar),
            unsafe_mask=self.unsafe_mask,
        )

    # -- exact densities and derived fields --------------------------------

    def _log_joint(self, z2d: np.ndarray) -> np.ndarray:
        """log(w_k) + log N(z | mu_k, var_k) for each point, shape (n, k)."""
        diff = z2d[:, None, :] - self.means[None, :, :]
        quad = np.sum(diff * diff / self.variances[None, :, :], axis=2)
        logdet = np.sum(np.log(self.variances), axis=1) + self.dim * _LOG_2PI
        return np.log(self.weights)[None, :] - 0.5 * (quad + logdet[None, :])

    def _prep(self, z):
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        z2d = z[None, :] if single else z
        if z2d.ndim != 2 or z2d.shape[1] != self.dim:
            raise ValueError(f"points must have trailing dimension {self.dim}")
        return z2d, single

    def log_density(self, z):
        """Exact mixture log density; (n,) for (n, d) input, scalar for (d,)."""
        z2d, single = self._prep(z)
        lj = self._log_joint(z2d)
        m = np.max(lj, axis=1, keepdims=True)
        out = m[:, 0] + np.log(np.sum(np.exp(lj - m), axis=1))
        return float(out[0]) if single else out

    def responsibilities(self, z):
        """Posterior component probabilities, rows summing to 1."""
        z2d, single = self._prep(z)
        lj = self._log_joint(z2d)
        m = np.max(lj, axis=1, keepdims=True)
        e = np.exp(lj - m)
        r = e / np.sum(e, axis=1, keepdims=True)
        return r[0] if single else r

    def score(self, z):
        """Gradient of the log density: responsibility-weighted pull to means."""
        z2d, single = self._prep(z)
        lj = self._log_joint(z2d)
        m = np.max(lj, axis=1, keepdims=True)
        e = np.exp(lj - m)
        r = e / np.sum(e, axis=1, keepdims=True)
        pull = (self.means[None, :, :] - z2d[:, None, :]) / self.variances[None, :, :]
        out = np.sum(r[:, :, None] * pull, axis=1)
        return out[0] if single else out

    def epsilon_pred(self, z, abar: float):
        """Ideal noise prediction for a mixture already diffused to ``abar``:
        -sqrt(1 - abar) times the score of self at z."""
        abar = float(abar)
        if not 0.0 < abar <= 1.0:
            raise ValueError("abar must lie in (0, 1]")
        return -np.sqrt(1.0 - abar) * self.score(z)

    # -- safe restriction ---------------------------------------------------

    def safe_oracle(self) -> "GaussianMixture":
        """The mixture renormalized to its safe (not unsafe) components."""
        keep = ~self.unsafe_mask
        if not np.any(keep):
            raise ValueError("no safe components to restrict to")
        w = self.weights[keep]
        return GaussianMixture(
            weights=w / w.sum(),
            means=self.means[keep],
            variances=self.variances[keep],
            unsafe_mask=np.zeros(int(keep.sum()), dtype=bool),
        )
