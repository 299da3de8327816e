"""Visual vocabulary and VLAD global descriptors.

A keyframe arrives as a set of local descriptors (n x d). They are
hard-assigned to a k-means vocabulary, per-cluster residual sums are
intra-normalized and concatenated, and the result is L2-normalized into a
global descriptor of length k*d. Keyframes with no locals, or whose
residuals cancel exactly, yield the zero vector and are treated as
degenerate: they are stored but score 0 against everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, InsufficientData


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Immutable k-means codebook; shareable across threads."""

    centers: np.ndarray  # (k, d) float64
    seed: int

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("centers must be a (k, d) matrix with k >= 1")
        if not np.all(np.isfinite(c)):
            raise ValueError("centers must be finite")
        if len(np.unique(c, axis=0)) != c.shape[0]:
            raise ValueError("centers must be pairwise distinct")
        object.__setattr__(self, "centers", c)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(len(points)))]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            raise InsufficientData(
                f"fewer than {k} distinct training descriptors"
            )
        centers[j] = points[int(rng.choice(len(points), p=d2 / total))]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def lloyd_kmeans(
    points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 25
) -> tuple[np.ndarray, list[float]]:
    """Plain Lloyd iteration with k-means++ seeding.

    Returns the centers and the inertia after each assignment step; stops
    early once no center moves more than 1e-6. Clusters that lose all
    members keep their previous center.
    """
    centers = _kmeanspp_init(points, k, rng)
    trace: list[float] = []
    for _ in range(max_iter):
        d2 = cdist(points, centers, "sqeuclidean")
        assign = np.argmin(d2, axis=1)  # ties resolve to the lowest index
        trace.append(float(d2[np.arange(len(points)), assign].sum()))
        moved = 0.0
        for j in range(k):
            members = points[assign == j]
            if len(members) == 0:
                continue
            new_center = members.mean(axis=0)
            moved = max(moved, float(np.linalg.norm(new_center - centers[j])))
            centers[j] = new_center
        if moved < 1e-6:
            break
    return centers, trace


def build_vocabulary(training: list[np.ndarray], k: int, seed: int) -> Vocabulary:
    """Pool local descriptor sets and fit a k-center codebook.

    Deterministic for a given seed. Raises InsufficientData when the pool
    holds fewer than k descriptors and DimensionMismatch when the sets
    disagree on d.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pools = []
    d = None
    for block in training:
        block = np.asarray(block, dtype=np.float64)
        if block.size == 0:
            continue
        if block.ndim != 2:
            raise DimensionMismatch("local descriptor sets must be 2-d matrices")
        if d is None:
            d = block.shape[1]
        elif block.shape[1] != d:
            raise DimensionMismatch(
                f"descriptor dimension changed from {d} to {block.shape[1]}"
            )
        pools.append(block)
    n = sum(len(p) for p in pools)
    if n < k:
        raise InsufficientData(f"need at least {k} training descriptors, got {n}")
    points = np.vstack(pools)
    if not np.all(np.isfinite(points)):
        raise ValueError("training descriptors must be finite")
    centers, _ = lloyd_kmeans(points, k, np.random.default_rng(seed))
    return Vocabulary(centers=centers, seed=seed)


def aggregate_vlad(locals_: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """VLAD aggregation of one keyframe's local descriptors.

    An empty set returns the zero vector (the degenerate marker) rather
    than raising. Rows are accumulated in a canonical sort order so any
    permutation of the input yields a bit-identical output.
    """
    locals_ = np.asarray(locals_, dtype=np.float64)
    if locals_.size == 0:
        return np.zeros(vocab.k * vocab.d)
    if locals_.ndim != 2 or locals_.shape[1] != vocab.d:
        raise DimensionMismatch(
            f"expected (n, {vocab.d}) local descriptors, got shape {locals_.shape}"
        )
    if not np.all(np.isfinite(locals_)):
        raise ValueError("local descriptors must be finite")
    locals_ = locals_[np.lexsort(locals_.T)]
    assign = np.argmin(cdist(locals_, vocab.centers, "sqeuclidean"), axis=1)
    blocks = np.zeros((vocab.k, vocab.d))
    np.add.at(blocks, assign, locals_ - vocab.centers[assign])
    for j in range(vocab.k):
        norm = float(np.linalg.norm(blocks[j]))
        if norm > 0.0:
            blocks[j] /= norm
    flat = blocks.ravel()
    total = float(np.linalg.norm(flat))
    if total > 0.0:
        flat = flat / total
    return flat


def is_degenerate(descriptor: np.ndarray) -> bool:
    """True for the all-zero global descriptor."""
    return not np.any(descriptor)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two global descriptors; 0.0 if either is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"descriptor lengths differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))
