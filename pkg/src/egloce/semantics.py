"""Analytic stand-ins for the text/image encoders of a guided sampler.

Decoded points are featurized by a softmax over negative squared distances
to a fixed anchor set, then L2-normalized; concept embeddings are indicator
vectors over anchor labels, normalized to the unit sphere. Energies are
inner products between the two, so both values and gradients have closed
forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
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
]


def _as_readonly(a) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ConceptSpace:
    """Anchor points in image space plus the softmax temperature.

    Anchors must be pairwise distinct; ``labels`` gives each anchor a name
    used to build concept embeddings.
    """

    anchors: np.ndarray
    tau: float
    labels: tuple

    def __post_init__(self):
        anchors = _as_readonly(self.anchors)
        tau = float(self.tau)
        labels = tuple(str(x) for x in self.labels)
        if anchors.ndim != 2 or anchors.shape[0] < 2:
            raise ValueError("need at least two anchors in an (m, q) array")
        if not np.all(np.isfinite(anchors)):
            raise ValueError("anchors must be finite")
        m = anchors.shape[0]
        for i in range(m):
            for j in range(i + 1, m):
                if np.array_equal(anchors[i], anchors[j]):
                    raise ValueError("anchors must be pairwise distinct")
        if not (np.isfinite(tau) and tau > 0.0):
            raise ValueError("tau must be a positive real")
        if len(labels) != m or len(set(labels)) != m:
            raise ValueError("need one unique label per anchor")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "labels", labels)

    @property
    def num_anchors(self) -> int:
        return int(self.anchors.shape[0])

    @property
    def image_dim(self) -> int:
        return int(self.anchors.shape[1])

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown concept label {label!r}") from None


@dataclass(frozen=True)
class TextEmbedding:
    """Unit-norm direction in feature space naming a set of concepts."""

    vector: np.ndarray
    label: str

    def __post_init__(self):
        vector = _as_readonly(self.vector)
        if vector.ndim != 1:
            raise ValueError("embedding must be a vector")
        norm = float(np.sqrt(np.sum(vector * vector)))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError("embedding must have unit norm within 1e-10")
        object.__setattr__(self, "vector", vector)
        object.__setattr__(self, "label", str(self.label))


@dataclass(frozen=True)
class LatentDecoder:
    """Map from latents to image space: identity, or a fixed full-column-rank
    linear lift ``x = M z``."""

    matrix: np.ndarray = None

    def __post_init__(self):
        if self.matrix is None:
            return
        matrix = _as_readonly(self.matrix)
        if matrix.ndim != 2:
            raise ValueError("decoder matrix must be 2-D")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("decoder matrix must be finite")
        if np.linalg.matrix_rank(matrix) != matrix.shape[1]:
            raise ValueError("decoder matrix must have full column rank")
        object.__setattr__(self, "matrix", matrix)

    @property
    def kind(self) -> str:
        return "identity" if self.matrix is None else "linear"

    def decode(self, z: np.ndarray) -> np.ndarray:
        if self.matrix is None:
            return np.asarray(z, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        # Broadcast-sum instead of matmul keeps the reduction order identical
        # between single points and batches.
        return np.sum(z[..., None, :] * self.matrix, axis=-1)

    def pullback(self, grad_x: np.ndarray) -> np.ndarray:
        """Chain rule through the decoder: image-space gradient to latent."""
        if self.matrix is None:
            return np.asarray(grad_x, dtype=np.float64)
        grad_x = np.asarray(grad_x, dtype=np.float64)
        return np.sum(grad_x[..., None] * self.matrix, axis=-2)


def default_linear_decoder() -> LatentDecoder:
    """Fixed rank-2 lift of planar latents into R^3, for exercising the
    decoder chain rule."""
    return LatentDecoder(matrix=np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))


def concept_space_from_world(world, decoder: LatentDecoder = None, tau: float = 1.0) -> ConceptSpace:
    """Anchors are the decoded component means of the world's blend."""
    decoder = decoder or LatentDecoder()
    return ConceptSpace(
        anchors=decoder.decode(world.blend.means),
        tau=tau,
        labels=world.labels,
    )


# -- feature map ------------------------------------------------------------


def feature_map(space: ConceptSpace, x):
    """Softmax over negative squared anchor distances, L2-normalized.

    The softmax partition constant cancels under L2 normalization, so only
    the max-shifted exponentials are formed. Accepts (q,) or (n, q) input.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2d = x[None, :] if single else x
    if x2d.ndim != 2 or x2d.shape[1] != space.image_dim:
        raise ValueError(f"points must have trailing dimension {space.image_dim}")
    diff = x2d[:, None, :] - space.anchors[None, :, :]
    logits = -np.sum(diff * diff, axis=2) / space.tau
    m = np.max(logits, axis=1, keepdims=True)
    w = np.exp(logits - m)
    phi = w / np.sqrt(np.sum(w * w, axis=1, keepdims=True))
    return phi[0] if single else phi


def text_embed(space: ConceptSpace, concept_ids) -> TextEmbedding:
    """Normalized indicator over the named anchors.

    Accepts a single label or an iterable of labels; the empty set yields
    the uniform null embedding used for unconditional guidance.
    """
    if isinstance(concept_ids, str):
        concept_ids = (concept_ids,)
    ids = tuple(dict.fromkeys(str(c) for c in concept_ids))
    m = space.num_anchors
    if not ids:
        vec = np.full(m, 1.0 / np.sqrt(m))
        return TextEmbedding(vector=vec, label="null")
    vec = np.zeros(m)
    for c in ids:
        vec[space.label_index(c)] = 1.0
    vec /= np.sqrt(float(len(ids)))
    return TextEmbedding(vector=vec, label="+".join(ids))


def null_embedding(space: ConceptSpace) -> TextEmbedding:
    return text_embed(space, ())


# -- energies and exact gradients -------------------------------------------


def _embedding_vector(embedding) -> np.ndarray:
    if isinstance(embedding, TextEmbedding):
        return embedding.vector
    return np.asarray(embedding, dtype=np.float64)


def repulsion_energy(space: ConceptSpace, decoder: LatentDecoder, z0, embedding):
    """Alignment <phi(D(z0)), e>; driving this down pushes z0 off the concept."""
    phi = feature_map(space, decoder.decode(z0))
    # Explicit sum, not a BLAS dot, so batched and single evaluations share
    # one reduction order.
    return np.sum(phi * _embedding_vector(embedding), axis=-1)


def retention_energy(space: ConceptSpace, decoder: LatentDecoder, z0, embedding):
    """Negative alignment with the prompt embedding; low when the prompt's
    content is preserved."""
    return -repulsion_energy(space, decoder, z0, embedding)


def energy_grad(space: ConceptSpace, decoder: LatentDecoder, z0, embedding, sign: float = 1.0):
    """Exact gradient of ``sign * <phi(D(z)), e>`` with respect to z.

    Because phi is scale-invariant in the shifted exponentials w, the
    softmax-shift term drops out and d<phi,e>/dlogit_j reduces to
    phi_j (e_j - E phi_j). Accepts (d,) or (n, d) input.
    """
    if sign not in (1.0, -1.0, 1, -1):
        raise ValueError("sign must be +1 or -1")
    e = _embedding_vector(embedding)
    z0 = np.asarray(z0, dtype=np.float64)
    single = z0.ndim == 1
    z2d = z0[None, :] if single else z0
    x = decoder.decode(z2d)
    diff = x[:, None, :] - space.anchors[None, :, :]
    logits = -np.sum(diff * diff, axis=2) / space.tau
    m = np.max(logits, axis=1, keepdims=True)
    w = np.exp(logits - m)
    phi = w / np.sqrt(np.sum(w * w, axis=1, keepdims=True))
    energy = np.sum(phi * e[None, :], axis=1)
    u = phi * (e[None, :] - energy[:, None] * phi)
    su = np.sum(u, axis=1)
    ua = np.sum(u[:, :, None] * space.anchors[None, :, :], axis=1)
    grad_x = (-2.0 / space.tau) * (x * su[:, None] - ua)
    grad = float(sign) * decoder.pullback(grad_x)
    return grad[0] if single else grad
