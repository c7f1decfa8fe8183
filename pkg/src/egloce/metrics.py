"""Distributional metrics for judging erasure quality against exact oracles.

Points are assigned to mixture components by maximum posterior
responsibility. Erasure strength is the frequency mass landing on unsafe
components; retention quality compares the safe-assigned empirical
distribution against the renormalized safe oracle, in mode frequencies
(total variation) and in shape (sliced 2-Wasserstein).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixture import GaussianMixture, SampleBatch
from .semantics import repulsion_energy

__all__ = [
    "DEFAULT_PROJECTIONS",
    "PROJECTION_SEED",
    "MetricsReport",
    "assign_components",
    "mode_mass",
    "erased_mass",
    "total_variation",
    "safe_tv",
    "sliced_w2",
    "alignment",
    "evaluate_batch",
]

DEFAULT_PROJECTIONS = 64

# Default seed for the sliced-W2 projection directions (and equal-size
# subsampling); deliberately independent of the data seeds.
PROJECTION_SEED = 7130


def _points(batch) -> np.ndarray:
    if isinstance(batch, SampleBatch):
        pts = batch.points
    else:
        pts = np.asarray(batch, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) batch of points")
    return pts


def assign_components(batch, gmm: GaussianMixture) -> np.ndarray:
    """Index of the most responsible component for each point."""
    pts = _points(batch)
    return np.argmax(gmm.responsibilities(pts), axis=1)


def mode_mass(batch, gmm: GaussianMixture) -> np.ndarray:
    """Fraction of points assigned to each component; sums to 1."""
    idx = assign_components(batch, gmm)
    counts = np.bincount(idx, minlength=gmm.num_components)
    return counts / counts.sum()


def erased_mass(batch, gmm: GaussianMixture) -> float:
    """Fraction of points whose assigned component is unsafe."""
    return float(mode_mass(batch, gmm)[gmm.unsafe_mask].sum())


def total_variation(p, q) -> float:
    """Half the L1 distance between two probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("vectors must share a shape")
    return 0.5 * float(np.sum(np.abs(p - q)))


def safe_tv(mass, gmm: GaussianMixture) -> float:
    """Total variation between safe-mode frequencies (renormalized over the
    safe components) and the safe oracle's weights.

    Returns 1.0 when no mass lands on any safe component.
    """
    mass = np.asarray(mass, dtype=np.float64)
    if mass.shape != (gmm.num_components,):
        raise ValueError("mode mass must align with the mixture components")
    safe = mass[~gmm.unsafe_mask]
    total = float(safe.sum())
    if total <= 0.0:
        return 1.0
    return total_variation(safe / total, gmm.safe_oracle().weights)


def sliced_w2(
    batch_a,
    batch_b,
    n_projections: int = DEFAULT_PROJECTIONS,
    seed: int = PROJECTION_SEED,
) -> float:
    """Sliced 2-Wasserstein distance between two point sets.

    One-dimensional W2 along unit projection directions, averaged. Unequal
    batch sizes are reconciled by seeded subsampling of the larger batch
    (without replacement), so the result is a pure function of the inputs
    and the seed.
    """
    a = _points(batch_a)
    b = _points(batch_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("batches must share a dimension")
    n_projections = int(n_projections)
    if n_projections < 1:
        raise ValueError("need at least one projection")
    rng = np.random.default_rng(int(seed))
    n = min(a.shape[0], b.shape[0])
    if a.shape[0] > n:
        a = a[rng.choice(a.shape[0], size=n, replace=False)]
    if b.shape[0] > n:
        b = b[rng.choice(b.shape[0], size=n, replace=False)]
    d = a.shape[1]
    dirs = rng.standard_normal((n_projections, d))
    dirs /= np.sqrt(np.sum(dirs * dirs, axis=1, keepdims=True))
    total = 0.0
    for v in dirs:
        # Broadcast-sum projection keeps the result independent of BLAS
        # threading.
        pa = np.sort(np.sum(a * v, axis=1))
        pb = np.sort(np.sum(b * v, axis=1))
        diff = pa - pb
        total += float(np.sqrt(np.mean(diff * diff)))
    return total / n_projections


def alignment(batch, space, decoder, embedding) -> float:
    """Mean feature alignment of a batch with an embedding."""
    pts = _points(batch)
    return float(np.mean(repulsion_energy(space, decoder, pts, embedding)))


@dataclass(frozen=True)
class MetricsReport:
    """Summary of one run's endpoints against the prompt's oracle."""

    n: int
    erased_mass: float
    mode_mass: np.ndarray
    safe_tv: float
    sliced_w2: float
    alignment: float


def evaluate_batch(
    batch,
    gmm: GaussianMixture,
    space,
    decoder,
    prompt_embedding,
    *,
    ref_seed: int,
    n_projections: int = DEFAULT_PROJECTIONS,
    w2_seed: int = PROJECTION_SEED,
) -> MetricsReport:
    """All metrics for one batch of chain endpoints.

    The sliced-W2 reference is an exact oracle sample of the safe mixture,
    drawn with ``ref_seed`` and matched to the number of safe-assigned
    points.
    """
    pts = _points(batch)
    idx = assign_components(pts, gmm)
    counts = np.bincount(idx, minlength=gmm.num_components)
    mass = counts / counts.sum()
    erased = float(mass[gmm.unsafe_mask].sum())
    tv = safe_tv(mass, gmm)

    safe_pts = pts[~gmm.unsafe_mask[idx]]
    if safe_pts.shape[0] == 0:
        w2 = float("inf")
    else:
        oracle = gmm.safe_oracle().sample(safe_pts.shape[0], seed=ref_seed)
        w2 = sliced_w2(safe_pts, oracle, n_projections=n_projections, seed=w2_seed)

    return MetricsReport(
        n=int(pts.shape[0]),
        erased_mass=erased,
        mode_mass=mass,
        safe_tv=tv,
        sliced_w2=w2,
        alignment=alignment(pts, space, decoder, prompt_embedding),
    )
