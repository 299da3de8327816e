"""Geometric verification of loop candidates.

Given putative 3D-3D correspondences between a query keyframe and a
matched keyframe, a similarity transform is estimated with RANSAC over
minimal 3-point samples, each solved in closed form (Umeyama), and the
candidate is accepted only when the refit inlier set reaches
``min_inliers`` (default 30). All randomness comes from a per-call PRNG
seeded from the config, so identical inputs give identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllSamplesDegenerate,
    DegenerateConfiguration,
    TooFewPoints,
)
from .geometry import Rotation, Sim3Transform, sim3_apply_many

REASON_TOO_FEW_POINTS = "too_few_points"
REASON_ALL_SAMPLES_DEGENERATE = "all_samples_degenerate"
REASON_MIN_INLIERS = "min_inliers"


@dataclass(frozen=True)
class Correspondence:
    """One matched landmark: p in the query frame, q in the match frame."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        for name in ("p", "q"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"correspondence point {name} must be a finite 3-vector")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class RansacConfig:
    max_iters: int = 1000
    inlier_dist: float = 0.05
    min_inliers: int = 30
    seed: int = 0
    adaptive: bool = False  # optional 99%-confidence early exit
    confidence: float = 0.99

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.inlier_dist > 0:
            raise ValueError("inlier_dist must be > 0")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")


@dataclass(frozen=True)
class VerificationResult:
    transform: Sim3Transform
    inlier_indices: list[int]
    accepted: bool


@dataclass(frozen=True)
class LoopConstraint:
    query_id: int
    match_id: int
    # maps points expressed in the query keyframe's frame into the match
    # keyframe's frame, i.e. inv(pose[match]) o pose[query]
    transform: Sim3Transform
    inliers: int


def umeyama(src: np.ndarray, dst: np.ndarray) -> Sim3Transform:
    """Closed-form least-squares similarity with dst ~ s * R @ src + t.

    Minimizes the sum of squared residuals over all of Sim(3); the SVD
    sign correction keeps det(R) = +1 even for reflected inputs.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    n = len(src)
    if n != len(dst):
        raise ValueError(f"point counts differ: {n} vs {len(dst)}")
    if n < 3:
        raise TooFewPoints(f"need at least 3 point pairs, got {n}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("points must be finite")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    src_demean = src - mu_s
    dst_demean = dst - mu_d
    var_src = float((src_demean ** 2).sum()) / n
    if var_src < 1e-12:
        raise DegenerateConfiguration("source points are (nearly) coincident")

    sigma = dst_demean.T @ src_demean / n
    if np.linalg.matrix_rank(sigma) < 2:
        raise DegenerateConfiguration("source points are (nearly) collinear")

    u, d, vt = np.linalg.svd(sigma)
    s_diag = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_diag[2] = -1.0
    rot = u @ np.diag(s_diag) @ vt
    scale = float((d * s_diag).sum()) / var_src
    if scale <= 1e-12:
        raise DegenerateConfiguration("optimal scale is not positive")
    t = mu_d - scale * rot @ mu_s
    return Sim3Transform(scale=scale, rotation=Rotation.from_matrix(rot), translation=t)


def _inliers(transform: Sim3Transform, p: np.ndarray, q: np.ndarray,
             inlier_dist: float) -> np.ndarray:
    gaps = np.linalg.norm(q - sim3_apply_many(transform, p), axis=1)
    return np.flatnonzero(gaps <= inlier_dist)


_CHUNK = 256  # hypotheses fitted and scored per vectorized batch


def _score_triples(idx: np.ndarray, p: np.ndarray, q: np.ndarray,
                   inlier_dist: float) -> np.ndarray:
    """Inlier counts for a (B, 3) batch of sample triples; -1 = degenerate.

    Batched copy of the minimal-sample umeyama fit: same demeaning, SVD
    sign correction, and degeneracy rules as the scalar path, so the
    counts match what one-at-a-time fitting would report.
    """
    p3 = p[idx]
    q3 = q[idx]
    mu_s = p3.mean(axis=1)
    mu_d = q3.mean(axis=1)
    sd = p3 - mu_s[:, None]
    dd = q3 - mu_d[:, None]
    var_src = (sd ** 2).sum(axis=(1, 2)) / 3.0
    sigma = dd.transpose(0, 2, 1) @ sd / 3.0
    u, d, vt = np.linalg.svd(sigma)
    s3 = np.ones((len(idx), 3))
    s3[np.linalg.det(u) * np.linalg.det(vt) < 0, 2] = -1.0
    rot = (u * s3[:, None, :]) @ vt
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = (d * s3).sum(axis=1) / var_src
    eps = np.finfo(np.float64).eps
    degenerate = ((var_src < 1e-12)
                  | (d[:, 1] <= d[:, 0] * 3 * eps)
                  | ~(scale > 1e-12))
    t = mu_d - scale[:, None] * np.einsum("bij,bj->bi", rot, mu_s)
    pred = scale[:, None, None] * np.einsum("bij,nj->bni", rot, p) + t[:, None, :]
    err = np.sqrt(((pred - q[None]) ** 2).sum(axis=2))
    counts = (err <= inlier_dist).sum(axis=1)
    counts[degenerate] = -1
    return counts


def ransac_sim3(corr: list[Correspondence], cfg: RansacConfig) -> VerificationResult:
    """Robust Sim(3) fit over minimal 3-point samples.

    The winning sample is the one with the most inliers, ties broken by
    the lexicographically lowest sorted index triple; it is then refit on
    its full inlier set and the inliers recounted under the refit
    transform, so every reported inlier satisfies the distance test.
    """
    n = len(corr)
    if n < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {n}")
    p = np.array([c.p for c in corr])
    q = np.array([c.q for c in corr])

    rng = np.random.default_rng(cfg.seed)
    samples = np.array([rng.choice(n, size=3, replace=False)
                        for _ in range(cfg.max_iters)])
    best_count = -1
    best_key: tuple[int, ...] | None = None
    best_sample: np.ndarray | None = None
    for start in range(0, cfg.max_iters, _CHUNK):
        idx = samples[start:start + _CHUNK]
        counts = _score_triples(idx, p, q, cfg.inlier_dist)
        cmax = int(counts.max())
        if cmax >= 0 and cmax >= best_count:
            tied = np.flatnonzero(counts == cmax)
            keys = np.sort(idx[tied], axis=1)
            first = tied[np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))[0]]
            key = tuple(sorted(int(i) for i in idx[first]))
            if cmax > best_count or key < best_key:
                best_count = cmax
                best_key = key
                best_sample = idx[first]
        if cfg.adaptive and best_count >= 3:
            # enough iterations to have drawn an all-inlier sample with the
            # requested confidence, given the best inlier ratio so far
            good = (best_count / n) ** 3
            done = start + len(idx)
            if good >= 1.0 or done * np.log1p(-good) <= np.log1p(-cfg.confidence):
                break

    if best_sample is None:
        raise AllSamplesDegenerate("every sampled triple was degenerate")

    transform = umeyama(p[best_sample], q[best_sample])
    inlier_idx = _inliers(transform, p, q, cfg.inlier_dist)
    if len(inlier_idx) >= 3:
        try:
            refit = umeyama(p[inlier_idx], q[inlier_idx])
        except DegenerateConfiguration:
            refit = None
        if refit is not None:
            transform = refit
            inlier_idx = _inliers(transform, p, q, cfg.inlier_dist)

    return VerificationResult(
        transform=transform,
        inlier_indices=[int(i) for i in inlier_idx],
        accepted=len(inlier_idx) >= cfg.min_inliers,
    )


def verify_loop(
    query_id: int,
    match_id: int,
    corr: list[Correspondence],
    cfg: RansacConfig,
) -> tuple[LoopConstraint | None, str | None]:
    """Gate a loop candidate on geometry.

    Returns (constraint, None) on acceptance and (None, reason) on any
    rejection; RANSAC errors are folded into rejection reasons rather
    than propagated.
    """
    try:
        result = ransac_sim3(corr, cfg)
    except TooFewPoints:
        return None, REASON_TOO_FEW_POINTS
    except AllSamplesDegenerate:
        return None, REASON_ALL_SAMPLES_DEGENERATE
    if not result.accepted:
        return None, REASON_MIN_INLIERS
    return (
        LoopConstraint(
            query_id=query_id,
            match_id=match_id,
            transform=result.transform,
            inliers=len(result.inlier_indices),
        ),
        None,
    )
