"""Sim(3) pose graph and Levenberg-Marquardt optimization.

Nodes are keyframe poses, edges are relative Sim(3) measurements
(odometry chain plus verified loop constraints) with scalar weights.
The residual of an edge is the tangent-space gap

    r = log( meas^-1 * pose_from^-1 * pose_to )

and the total cost is the weighted sum of squared residual norms. Poses
update right-multiplicatively (P <- P * exp(delta)); the gauge node is
excluded from the state vector so the global similarity freedom is
pinned to it. Normal equations are assembled from 7x7 blocks into a
sparse matrix; graphs here are desk-scale, so a direct sparse solve is
plenty.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, identity as sparse_identity
from scipy.sparse.linalg import spsolve

from .errors import DisconnectedGraph, MissingKeyframe, SingularNormalEquations
from .geometry import (
    Sim3Transform,
    expm_phi1,
    sim3_adjoint,
    sim3_compose,
    sim3_exp,
    sim3_inverse,
    sim3_log,
    sim3_log_parts,
    sim3_tangent_ad,
    skew,
)

EDGE_KINDS = ("odometry", "loop")

_DAMPING_CAP = 1e12


@dataclass(frozen=True)
class PoseEdge:
    from_id: int
    to_id: int
    measurement: Sim3Transform
    weight: float = 1.0
    kind: str = "odometry"

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise ValueError("edge endpoints must differ")
        if not self.weight > 0:
            raise ValueError("edge weight must be positive")
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"edge kind must be one of {EDGE_KINDS}")


@dataclass
class PoseGraph:
    nodes: dict[int, Sim3Transform] = field(default_factory=dict)
    edges: list[PoseEdge] = field(default_factory=list)
    gauge_id: int | None = None

    def add_node(self, frame_id: int, pose: Sim3Transform) -> None:
        if self.gauge_id is None:
            self.gauge_id = frame_id
        self.nodes[frame_id] = pose

    def add_edge(self, edge: PoseEdge) -> None:
        for endpoint in (edge.from_id, edge.to_id):
            if endpoint not in self.nodes:
                raise MissingKeyframe(f"edge endpoint {endpoint} has no node")
        self.edges.append(edge)


@dataclass(frozen=True)
class PgoConfig:
    max_iterations: int = 50
    initial_damping: float = 1e-4
    cost_tolerance: float = 1e-9
    robust_loops: bool = False
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.initial_damping > 0:
            raise ValueError("initial_damping must be positive")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")


@dataclass(frozen=True)
class OptimizationReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: tuple[float, ...] = ()


def loop_edge_weight(inliers: int, min_inliers: int) -> float:
    """Scalar confidence for a verified loop edge, capped at 50."""
    return min(10.0 * inliers / min_inliers, 50.0)


def edge_residual(edge: PoseEdge, poses: dict[int, Sim3Transform]) -> np.ndarray:
    relative = sim3_compose(sim3_inverse(poses[edge.from_id]), poses[edge.to_id])
    return sim3_log(sim3_compose(sim3_inverse(edge.measurement), relative))


# Raw (scale, rotation matrix, translation) triples for the solver's hot
# loops; one linearization pass touches every edge, and going through the
# dataclass constructors there costs more than the arithmetic.


def _raw_pose(p: Sim3Transform) -> tuple[float, np.ndarray, np.ndarray]:
    return p.scale, p.rotation.as_matrix(), p.translation


def _raw_edge(meas, fr, to):
    """Residual tangent and the raw relative transform for one edge."""
    sf, rf, tf = fr
    st, rt, tt = to
    sm, rm, tm = meas
    s_rel = st / sf
    r_rel = rf.T @ rt
    t_rel = rf.T @ (tt - tf) / sf
    r = sim3_log_parts(s_rel / sm, rm.T @ r_rel, rm.T @ (t_rel - tm) / sm)
    return r, (s_rel, r_rel, t_rel)


def _adjoint_parts(s: float, rot: np.ndarray, t: np.ndarray) -> np.ndarray:
    adj = np.zeros((7, 7))
    adj[:3, :3] = s * rot
    adj[:3, 3:6] = skew(t) @ rot
    adj[:3, 6] = -t
    adj[3:6, 3:6] = rot
    adj[6, 6] = 1.0
    return adj


def _inv_right_jacobian(r: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of the residual, d log(E exp(d))/dd at d=0."""
    ad = sim3_tangent_ad(r)
    if np.linalg.norm(ad) < 0.5:
        # Bernoulli series through ad^6; truncation ~|ad|^8/1.2e6 < 4e-12 here
        ad2 = ad @ ad
        ad4 = ad2 @ ad2
        return (np.eye(7) + 0.5 * ad + ad2 / 12.0
                - ad4 / 720.0 + (ad4 @ ad2) / 30240.0)
    return np.linalg.inv(expm_phi1(-ad))


def edge_jacobians(
    edge: PoseEdge, poses: dict[int, Sim3Transform]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual and its derivatives w.r.t. right-multiplicative updates.

    Returns (r, J_from, J_to) with J = dr/d(delta) for
    pose <- pose * exp(delta).
    """
    relative = sim3_compose(sim3_inverse(poses[edge.from_id]), poses[edge.to_id])
    r = sim3_log(sim3_compose(sim3_inverse(edge.measurement), relative))
    jr_inv = _inv_right_jacobian(r)
    j_to = jr_inv
    j_from = -jr_inv @ sim3_adjoint(sim3_inverse(relative))
    return r, j_from, j_to


def _check_connected(graph: PoseGraph) -> None:
    if graph.gauge_id is None or graph.gauge_id not in graph.nodes:
        raise DisconnectedGraph("graph has no gauge node")
    adjacency: dict[int, list[int]] = {fid: [] for fid in graph.nodes}
    for e in graph.edges:
        adjacency[e.from_id].append(e.to_id)
        adjacency[e.to_id].append(e.from_id)
    seen = {graph.gauge_id}
    frontier = deque([graph.gauge_id])
    while frontier:
        for neighbor in adjacency[frontier.popleft()]:
            if neighbor not in seen:
                seen.add(neighbor)
                frontier.append(neighbor)
    missing = set(graph.nodes) - seen
    if missing:
        raise DisconnectedGraph(
            f"{len(missing)} node(s) unreachable from gauge {graph.gauge_id}"
        )


def _weight_parts(weight: float, is_loop: bool, r: np.ndarray,
                  cfg: PgoConfig) -> tuple[float, float]:
    """(cost contribution, IRLS weight) for one edge."""
    sq = float(r @ r)
    if cfg.robust_loops and is_loop:
        norm = np.sqrt(sq)
        if norm > cfg.huber_delta:
            cost = 2.0 * cfg.huber_delta * norm - cfg.huber_delta ** 2
            return weight * cost, weight * cfg.huber_delta / norm
    return weight * sq, weight


def _edge_weight(edge: PoseEdge, r: np.ndarray, cfg: PgoConfig) -> tuple[float, float]:
    return _weight_parts(edge.weight, edge.kind == "loop", r, cfg)


def _total_cost(graph: PoseGraph, poses: dict[int, Sim3Transform],
                cfg: PgoConfig) -> float:
    total = 0.0
    for e in graph.edges:
        cost, _ = _edge_weight(e, edge_residual(e, poses), cfg)
        total += cost
    return total


def _raw_cost(meta, raw, cfg: PgoConfig) -> float:
    total = 0.0
    for fid_f, fid_t, meas, weight, is_loop in meta:
        r, _ = _raw_edge(meas, raw[fid_f], raw[fid_t])
        cost, _ = _weight_parts(weight, is_loop, r, cfg)
        total += cost
    return total


def optimize(
    graph: PoseGraph, cfg: PgoConfig = PgoConfig()
) -> tuple[dict[int, Sim3Transform], OptimizationReport]:
    """Levenberg-Marquardt over all non-gauge poses.

    Rejected steps raise the damping tenfold, accepted steps lower it;
    only strictly cost-decreasing steps are kept, so the cost trace is
    non-increasing. Raises DisconnectedGraph up front and
    SingularNormalEquations when solves still fail at the damping cap.
    """
    _check_connected(graph)
    free_ids = sorted(fid for fid in graph.nodes if fid != graph.gauge_id)
    index = {fid: i for i, fid in enumerate(free_ids)}
    poses = dict(graph.nodes)
    raw = {fid: _raw_pose(p) for fid, p in poses.items()}
    meta = [(e.from_id, e.to_id, _raw_pose(e.measurement), e.weight,
             e.kind == "loop") for e in graph.edges]

    cost = _raw_cost(meta, raw, cfg)
    trace = [cost]
    if not free_ids or not graph.edges:
        return poses, OptimizationReport(cost, cost, 0, True, tuple(trace))

    damping = cfg.initial_damping
    converged = False
    iterations = 0
    dim = 7 * len(free_ids)

    for _ in range(cfg.max_iterations):
        iterations += 1
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        b = np.zeros(dim)
        block_rows, block_cols = np.meshgrid(np.arange(7), np.arange(7),
                                             indexing="ij")
        for fid_f, fid_t, meas, weight, is_loop in meta:
            r, rel = _raw_edge(meas, raw[fid_f], raw[fid_t])
            _, w = _weight_parts(weight, is_loop, r, cfg)
            jr_inv = _inv_right_jacobian(r)
            s_rel, r_rel, t_rel = rel
            j_from = -jr_inv @ _adjoint_parts(
                1.0 / s_rel, r_rel.T, -(r_rel.T @ t_rel) / s_rel)
            j_to = jr_inv
            parts = []
            if fid_f != graph.gauge_id:
                parts.append((index[fid_f], j_from))
            if fid_t != graph.gauge_id:
                parts.append((index[fid_t], j_to))
            for i, (idx_i, j_i) in enumerate(parts):
                b[7 * idx_i:7 * idx_i + 7] += w * (j_i.T @ r)
                for idx_j, j_j in (p for k, p in enumerate(parts) if k >= i):
                    block = w * (j_i.T @ j_j)
                    rows.append(7 * idx_i + block_rows.ravel())
                    cols.append(7 * idx_j + block_cols.ravel())
                    vals.append(block.ravel())
                    if idx_i != idx_j:
                        rows.append(7 * idx_j + block_rows.ravel())
                        cols.append(7 * idx_i + block_cols.ravel())
                        vals.append(block.T.ravel())

        if float(np.abs(b).max()) < 1e-15:
            converged = True
            break
        h = coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim, dim),
        ).tocsr()

        stepped = False
        while damping <= _DAMPING_CAP:
            try:
                delta = spsolve(h + damping * sparse_identity(dim, format="csr"), -b)
            except Exception:
                delta = np.full(dim, np.nan)
            if not np.all(np.isfinite(delta)):
                damping *= 10.0
                continue
            if float(np.abs(delta).max()) < 1e-14:
                converged = True
                break
            tentative = dict(poses)
            tentative_raw = dict(raw)
            for fid, i in index.items():
                stepped_pose = sim3_compose(poses[fid],
                                            sim3_exp(delta[7 * i:7 * i + 7]))
                tentative[fid] = stepped_pose
                tentative_raw[fid] = _raw_pose(stepped_pose)
            new_cost = _raw_cost(meta, tentative_raw, cfg)
            if new_cost < cost:
                relative_drop = (cost - new_cost) / max(cost, 1e-300)
                poses = tentative
                raw = tentative_raw
                cost = new_cost
                trace.append(cost)
                damping = max(damping / 10.0, 1e-12)
                stepped = True
                if relative_drop < cfg.cost_tolerance:
                    converged = True
                break
            damping *= 10.0
        else:
            if not np.all(np.isfinite(delta)):
                raise SingularNormalEquations(
                    "normal equations unsolvable at maximum damping"
                )
            converged = True  # no decreasing step exists: local minimum
        if converged or not stepped:
            break

    return poses, OptimizationReport(
        initial_cost=trace[0],
        final_cost=cost,
        iterations=iterations,
        converged=converged,
        cost_trace=tuple(trace),
    )


@dataclass(frozen=True)
class TrajectoryEntry:
    """One output frame; ref_keyframe is None when the frame is a keyframe."""

    frame_id: int
    timestamp: float
    pose: Sim3Transform
    ref_keyframe: int | None = None


def apply_correction(
    trajectory: list[TrajectoryEntry],
    optimized: dict[int, Sim3Transform],
) -> list[TrajectoryEntry]:
    """Swap keyframe poses for optimized ones.

    Non-keyframe entries keep their relative offset to their reference
    keyframe. Raises MissingKeyframe when an entry's keyframe has no
    optimized pose.
    """
    old_by_id = {e.frame_id: e.pose for e in trajectory}
    corrected = []
    for entry in trajectory:
        if entry.ref_keyframe is None:
            if entry.frame_id not in optimized:
                raise MissingKeyframe(f"no optimized pose for keyframe {entry.frame_id}")
            pose = optimized[entry.frame_id]
        else:
            ref = entry.ref_keyframe
            if ref not in optimized or ref not in old_by_id:
                raise MissingKeyframe(f"no optimized pose for reference keyframe {ref}")
            offset = sim3_compose(sim3_inverse(old_by_id[ref]), entry.pose)
            pose = sim3_compose(optimized[ref], offset)
        corrected.append(
            TrajectoryEntry(entry.frame_id, entry.timestamp, pose, entry.ref_keyframe)
        )
    return corrected
