from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..numerics import make_rng

DEFAULT_PROJECTION_DIM = 32


@dataclass(frozen=True)
class SimilarityMetric:
    """Euclidean distance after an optional embedding of the feature space.

    ``kind`` is ``"euclidean_raw"`` or ``"euclidean_embedded"``. Embedded metrics
    carry either a fixed linear ``projection`` (d x k) or an arbitrary ``embed``
    callable such as a trained student's penultimate layer.
    """

    kind: str = "euclidean_raw"
    projection: np.ndarray | None = None
    embed_fn: Callable[[np.ndarray], np.ndarray] | None = None
    description: str = "euclidean_raw"

    def __post_init__(self):
        if self.kind not in ("euclidean_raw", "euclidean_embedded"):
            raise ValueError(f"unknown similarity kind {self.kind!r}")
        if self.kind == "euclidean_embedded" and self.projection is None and self.embed_fn is None:
            raise ValueError("an embedded metric needs a projection or an embedding function")

    def embed(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind == "euclidean_raw":
            return x
        if self.projection is not None:
            return x @ self.projection
        return np.asarray(self.embed_fn(x), dtype=np.float64)

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Pairwise distances between the rows of ``a`` and ``b``."""
        return pairwise_distances(self.embed(a), self.embed(b))

    @classmethod
    def random_projection(cls, input_dim: int, out_dim: int = DEFAULT_PROJECTION_DIM,
                          seed: int = 0) -> "SimilarityMetric":
        proj = make_rng([seed, 0x9E0]).standard_normal((input_dim, out_dim)) / np.sqrt(out_dim)
        return cls("euclidean_embedded", projection=proj,
                   description=f"euclidean_embedded(random_projection,{input_dim}->{out_dim},seed={seed})")

    @classmethod
    def default_for(cls, input_dim: int, seed: int = 0) -> "SimilarityMetric":
        """Raw Euclidean up to 32 dimensions, else a seeded random projection to 32."""
        if input_dim <= DEFAULT_PROJECTION_DIM:
            return cls()
        return cls.random_projection(input_dim, DEFAULT_PROJECTION_DIM, seed)


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
