"""Synthetic worlds with known ground truth.

A world is a planar trajectory (square lap, figure-eight, or corridor
out-and-back) revisited with period ``round(loop_fraction * n)``, so late
frames return to places seen early. Each place (a quantized ground-truth
position cell) owns a few random unit "signature" vectors scaled by the
place separation; a frame's local descriptors are its place signatures
plus Gaussian noise, which is the minimal model that makes same-place
VLAD descriptors correlate. Odometry is the ground-truth relative chain
perturbed per step by tangent-space noise (translation, rotation, and a
scale rate, so monocular scale drift is representable).

Every random quantity is drawn from a generator seeded by the world seed
plus a purpose-specific spawn key, so datasets are reproducible and
insensitive to generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, InvalidFrames, LengthMismatch
from .geometry import (
    Rotation,
    Sim3Transform,
    sim3_apply_many,
    sim3_compose,
    sim3_exp,
    sim3_inverse,
)
from .pose_graph import TrajectoryEntry
from .verification import Correspondence, umeyama

SHAPES = ("square", "figure-eight", "corridor")

_FRAME_DT = 0.1
_CORR_BOX = 5.0
# spawn-key namespaces so independent draws never share a stream
_NS_PLACE = 1
_NS_LOCALS = 2
_NS_ODOMETRY = 3
_NS_CORRESPONDENCES = 4


@dataclass(frozen=True)
class WorldConfig:
    shape: str = "square"
    n_keyframes: int = 400
    loop_fraction: float = 0.9
    extent: float = 10.0
    place_cell: float = 1.0
    sigma_trans: float = 0.01
    sigma_rot: float = 0.002
    sigma_scale: float = 0.001
    descriptor_dim: int = 32
    locals_per_frame: int = 60
    signatures_per_place: int = 4
    place_noise: float = 0.05
    place_separation: float = 0.5
    landmarks_per_pair: int = 100
    outlier_ratio: float = 0.2
    corr_noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InvalidConfig(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.n_keyframes < 10:
            raise InvalidConfig("n_keyframes must be >= 10")
        if not 0.0 < self.loop_fraction <= 1.0:
            raise InvalidConfig("loop_fraction must be in (0, 1]")
        for name in ("sigma_trans", "sigma_rot", "sigma_scale", "place_noise",
                     "corr_noise"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        if not 0.0 <= self.outlier_ratio < 1.0:
            raise InvalidConfig("outlier_ratio must be in [0, 1)")
        if self.extent <= 0 or self.place_cell <= 0 or self.place_separation <= 0:
            raise InvalidConfig("extent, place_cell, place_separation must be > 0")
        if self.descriptor_dim < 2 or self.locals_per_frame < 1:
            raise InvalidConfig("descriptor_dim >= 2 and locals_per_frame >= 1 required")
        if self.signatures_per_place < 1:
            raise InvalidConfig("signatures_per_place must be >= 1")
        if self.landmarks_per_pair < 3:
            raise InvalidConfig("landmarks_per_pair must be >= 3")


@dataclass
class SyntheticDataset:
    cfg: WorldConfig
    ground_truth: list[TrajectoryEntry]
    odometry: dict[int, Sim3Transform]  # relative pose, frame i-1 -> i
    locals: dict[int, np.ndarray]
    place_ids: list[tuple[int, int, int]]
    revisits: list[tuple[int, int]]
    period: int


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _zigzag(n: int) -> int:
    return 2 * n if n >= 0 else -2 * n - 1


def _square_pose(u: float, extent: float) -> tuple[np.ndarray, float]:
    edge = int(u // extent) % 4
    frac = u - (u // extent) * extent
    if edge == 0:
        return np.array([frac, 0.0, 0.0]), 0.0
    if edge == 1:
        return np.array([extent, frac, 0.0]), math.pi / 2
    if edge == 2:
        return np.array([extent - frac, extent, 0.0]), math.pi
    return np.array([0.0, extent - frac, 0.0]), 3 * math.pi / 2


def _ground_truth_pose(cfg: WorldConfig, i: int, period: int) -> Sim3Transform:
    u = i % period
    if cfg.shape == "square":
        pos, yaw = _square_pose(u * (4.0 * cfg.extent / period), cfg.extent)
    elif cfg.shape == "figure-eight":
        t = 2.0 * math.pi * u / period
        pos = np.array([cfg.extent * math.sin(t),
                        cfg.extent * math.sin(t) * math.cos(t), 0.0])
        yaw = math.atan2(math.cos(2 * t), math.cos(t))
    else:  # corridor: out along x, back on a parallel lane
        half = period // 2
        if u < half:
            pos = np.array([cfg.extent * u / half, 0.0, 0.0])
            yaw = 0.0
        else:
            pos = np.array([cfg.extent * (1.0 - (u - half) / (period - half)),
                            0.4 * cfg.place_cell, 0.0])
            yaw = math.pi
    return Sim3Transform(
        rotation=Rotation.from_rotvec([0.0, 0.0, yaw]),
        translation=pos,
    )


def _place_id(pos: np.ndarray, cell: float) -> tuple[int, int, int]:
    return tuple(int(round(float(c) / cell)) for c in pos)


def generate(cfg: WorldConfig) -> SyntheticDataset:
    """Build a deterministic synthetic dataset from a world config."""
    period = max(2, round(cfg.loop_fraction * cfg.n_keyframes))
    gt = []
    place_ids = []
    for i in range(cfg.n_keyframes):
        pose = _ground_truth_pose(cfg, i, period)
        gt.append(TrajectoryEntry(i, i * _FRAME_DT, pose))
        place_ids.append(_place_id(pose.translation, cfg.place_cell))

    signatures: dict[tuple[int, int, int], np.ndarray] = {}
    locals_: dict[int, np.ndarray] = {}
    for i, place in enumerate(place_ids):
        if place not in signatures:
            rng = _rng(cfg.seed, _NS_PLACE, *(_zigzag(c) for c in place))
            raw = rng.normal(0.0, 1.0, (cfg.signatures_per_place, cfg.descriptor_dim))
            raw /= np.linalg.norm(raw, axis=1, keepdims=True)
            signatures[place] = cfg.place_separation * raw
        sigs = signatures[place]
        rng = _rng(cfg.seed, _NS_LOCALS, i)
        base = sigs[np.arange(cfg.locals_per_frame) % len(sigs)]
        locals_[i] = base + rng.normal(0.0, cfg.place_noise,
                                       (cfg.locals_per_frame, cfg.descriptor_dim))

    odometry: dict[int, Sim3Transform] = {}
    for i in range(1, cfg.n_keyframes):
        rel = sim3_compose(sim3_inverse(gt[i - 1].pose), gt[i].pose)
        rng = _rng(cfg.seed, _NS_ODOMETRY, i)
        noise = np.concatenate([
            rng.normal(0.0, cfg.sigma_trans, 3),
            rng.normal(0.0, cfg.sigma_rot, 3),
            rng.normal(0.0, cfg.sigma_scale, 1),
        ])
        odometry[i] = sim3_compose(rel, sim3_exp(noise))

    revisits = [(i, i + period)
                for i in range(cfg.n_keyframes - period)]
    return SyntheticDataset(
        cfg=cfg,
        ground_truth=gt,
        odometry=odometry,
        locals=locals_,
        place_ids=place_ids,
        revisits=revisits,
        period=period,
    )


def integrate_odometry(dataset: SyntheticDataset) -> list[TrajectoryEntry]:
    """Compose the noisy odometry chain from the first ground-truth pose."""
    entries = [dataset.ground_truth[0]]
    for i in range(1, dataset.cfg.n_keyframes):
        pose = sim3_compose(entries[-1].pose, dataset.odometry[i])
        entries.append(TrajectoryEntry(i, i * _FRAME_DT, pose))
    return entries


def relative_gt(dataset: SyntheticDataset, frame_a: int, frame_b: int) -> Sim3Transform:
    """Ground-truth transform taking points in frame_a's frame to frame_b's."""
    n = dataset.cfg.n_keyframes
    if not (0 <= frame_a < n and 0 <= frame_b < n):
        raise InvalidFrames(f"frames ({frame_a}, {frame_b}) outside 0..{n - 1}")
    return sim3_compose(
        sim3_inverse(dataset.ground_truth[frame_b].pose),
        dataset.ground_truth[frame_a].pose,
    )


def make_correspondences(
    dataset: SyntheticDataset,
    frame_a: int,
    frame_b: int,
    n: int,
    outlier_ratio: float,
    noise: float,
    seed: int,
) -> list[Correspondence]:
    """Landmark pairs between two frames: p in frame_a, q in frame_b.

    Exactly round(n * (1 - outlier_ratio)) pairs follow the ground-truth
    relative transform (plus Gaussian noise); the rest are uniform junk.
    """
    if n < 3:
        raise InvalidFrames(f"need at least 3 correspondences, got {n}")
    truth = relative_gt(dataset, frame_a, frame_b)
    rng = np.random.default_rng(seed)
    n_inliers = round(n * (1.0 - outlier_ratio))
    p = rng.uniform(-_CORR_BOX, _CORR_BOX, (n, 3))
    q = np.empty((n, 3))
    q[:n_inliers] = (sim3_apply_many(truth, p[:n_inliers])
                     + rng.normal(0.0, noise, (n_inliers, 3)))
    q[n_inliers:] = rng.uniform(-3 * _CORR_BOX, 3 * _CORR_BOX, (n - n_inliers, 3))
    return [Correspondence(p=a, q=b) for a, b in zip(p, q)]


def correspondence_seed(world_seed: int, frame_a: int, frame_b: int) -> int:
    """Stable per-pair seed for correspondence generation."""
    seq = np.random.SeedSequence(
        world_seed, spawn_key=(_NS_CORRESPONDENCES, frame_a, frame_b)
    )
    return int(seq.generate_state(1)[0])


@dataclass
class DatasetProviders:
    """Duck-typed provider bundle the pipeline consumes.

    Correspondences exist only for same-place pairs; for anything else
    the matcher comes back empty, the way a real feature matcher finds
    nothing between unrelated views.
    """

    dataset: SyntheticDataset

    def descriptors(self, frame_id: int) -> np.ndarray:
        return self.dataset.locals[frame_id]

    def odometry(self, frame_id: int) -> Sim3Transform:
        return self.dataset.odometry[frame_id]

    def correspondences(self, query_id: int, match_id: int) -> list[Correspondence]:
        if self.dataset.place_ids[query_id] != self.dataset.place_ids[match_id]:
            return []
        cfg = self.dataset.cfg
        return make_correspondences(
            self.dataset, query_id, match_id,
            n=cfg.landmarks_per_pair,
            outlier_ratio=cfg.outlier_ratio,
            noise=cfg.corr_noise,
            seed=correspondence_seed(cfg.seed, query_id, match_id),
        )


def _kabsch(src: np.ndarray, dst: np.ndarray) -> Sim3Transform:
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    sigma = (dst - mu_d).T @ (src - mu_s) / len(src)
    u, _, vt = np.linalg.svd(sigma)
    s_diag = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_diag[2] = -1.0
    rot = u @ np.diag(s_diag) @ vt
    return Sim3Transform(
        rotation=Rotation.from_matrix(rot),
        translation=mu_d - rot @ mu_s,
    )


def ate_rmse(
    gt: list[TrajectoryEntry],
    est: list[TrajectoryEntry],
    alignment: str = "sim3",
) -> float:
    """Absolute trajectory error over positions, after optional alignment."""
    if alignment not in ("none", "se3", "sim3"):
        raise ValueError(f"alignment must be none, se3, or sim3, got {alignment!r}")
    if len(gt) != len(est):
        raise LengthMismatch(f"trajectory lengths differ: {len(gt)} vs {len(est)}")
    for a, b in zip(gt, est):
        if a.frame_id != b.frame_id:
            raise LengthMismatch(f"frame ids diverge: {a.frame_id} vs {b.frame_id}")
    p_gt = np.array([e.pose.translation for e in gt])
    p_est = np.array([e.pose.translation for e in est])
    if alignment == "sim3":
        p_est = sim3_apply_many(umeyama(p_est, p_gt), p_est)
    elif alignment == "se3":
        p_est = sim3_apply_many(_kabsch(p_est, p_gt), p_est)
    return float(np.sqrt(np.mean(np.sum((p_gt - p_est) ** 2, axis=1))))
