"""Loop registration orchestration.

One pass per keyframe: integrate odometry, aggregate the global
descriptor, retrieve candidates outside the exclusion window, test the
best score against the adaptive threshold, geometrically verify, and on
acceptance re-optimize the pose graph and correct the trajectory.

Every decision is appended to an event log rich enough to rebuild the
final trajectory without the descriptor or matcher providers: ingestion
events carry the odometry relative actually used, acceptance events
carry the verified constraint. ``replay`` folds a log over the keyframe
stream and reproduces the run bit for bit, which pins down that the
output is a pure function of (inputs, config, seed).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .database import KeyframeDatabase, KeyframeRecord, best_candidate
from .descriptors import Vocabulary, aggregate_vlad
from .errors import (
    ConfigMismatch,
    DimensionMismatch,
    InvalidConfig,
    LoopforgeError,
    ProviderDesync,
    ReplayMismatch,
)
from .geometry import Sim3Transform, sim3_compose
from .io_formats import _pose_from_json, _pose_to_json, config_hash
from .pose_graph import (
    PgoConfig,
    PoseEdge,
    PoseGraph,
    TrajectoryEntry,
    apply_correction,
    loop_edge_weight,
    optimize,
)
from .threshold import AdaptiveThreshold
from .verification import LoopConstraint, RansacConfig, verify_loop

EVENT_KINDS = (
    "KeyframeIngested",
    "CandidateScored",
    "LoopAccepted",
    "LoopRejected",
    "OptimizationStarted",
    "OptimizationFinished",
)


@dataclass(frozen=True)
class Keyframe:
    frame_id: int
    timestamp: float


@dataclass(frozen=True)
class PipelineConfig:
    exclusion_window: int = 50
    warmup_target: int = 5
    retrieval_k: int = 5
    ransac: RansacConfig = field(default_factory=RansacConfig)
    pgo: PgoConfig = field(default_factory=PgoConfig)
    vocabulary: str | None = None
    vocab_k: int = 32
    fixed_threshold: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.exclusion_window < 0:
            raise InvalidConfig("exclusion_window must be >= 0")
        if self.warmup_target < 1 or self.retrieval_k < 1 or self.vocab_k < 1:
            raise InvalidConfig("warmup_target, retrieval_k, vocab_k must be >= 1")
        if self.fixed_threshold is not None and not math.isfinite(self.fixed_threshold):
            raise InvalidConfig("fixed_threshold must be finite")

    @property
    def hash(self) -> str:
        return config_hash(dataclasses.asdict(self))


@dataclass(frozen=True)
class PipelineEvent:
    kind: str
    frame_id: int
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass
class EventLog:
    config_hash: str
    events: list[PipelineEvent] = field(default_factory=list)

    def append(self, kind: str, frame_id: int, **payload) -> None:
        self.events.append(PipelineEvent(kind, frame_id, payload))

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)


def _fetch(provider_fn, frame_id: int, what: str):
    try:
        return provider_fn(frame_id)
    except (KeyError, IndexError) as exc:
        raise ProviderDesync(f"{what} provider has no frame {frame_id}") from exc


def _build_graph(
    entries: list[TrajectoryEntry],
    odometry: dict[int, Sim3Transform],
    constraints: list[LoopConstraint],
    min_inliers: int,
) -> PoseGraph:
    graph = PoseGraph()
    for e in entries:
        graph.add_node(e.frame_id, e.pose)
    prev = None
    for e in entries:
        if prev is not None:
            graph.add_edge(PoseEdge(prev, e.frame_id, odometry[e.frame_id],
                                    weight=1.0, kind="odometry"))
        prev = e.frame_id
    for c in constraints:
        graph.add_edge(PoseEdge(
            c.match_id, c.query_id, c.transform,
            weight=loop_edge_weight(c.inliers, min_inliers),
            kind="loop",
        ))
    return graph


def _reoptimize(
    entries: list[TrajectoryEntry],
    odometry: dict[int, Sim3Transform],
    constraints: list[LoopConstraint],
    cfg: PipelineConfig,
    log: EventLog,
    db: KeyframeDatabase,
) -> list[TrajectoryEntry]:
    trigger = constraints[-1].query_id
    log.append("OptimizationStarted", trigger, loops=len(constraints))
    graph = _build_graph(entries, odometry, constraints, cfg.ransac.min_inliers)
    try:
        poses, report = optimize(graph, cfg.pgo)
    except LoopforgeError as exc:
        # a constraint the solver cannot absorb is dropped, never fatal
        bad = constraints.pop()
        log.append("LoopRejected", trigger,
                   match_id=bad.match_id,
                   reason=f"optimization:{type(exc).__name__}")
        return entries
    log.append("OptimizationFinished", trigger,
               iterations=report.iterations,
               initial_cost=report.initial_cost,
               final_cost=report.final_cost,
               converged=report.converged)
    corrected = apply_correction(entries, poses)
    for e in corrected:
        db.update_pose(e.frame_id, e.pose)
    return corrected


def run(
    stream,
    providers,
    cfg: PipelineConfig,
    vocabulary: Vocabulary | None = None,
):
    """Process a keyframe stream; returns (trajectory, event log)."""
    vocab = vocabulary
    if vocab is None:
        if cfg.vocabulary is None:
            raise InvalidConfig("no vocabulary: pass one or set cfg.vocabulary")
        from .io_formats import read_vocabulary
        vocab = read_vocabulary(cfg.vocabulary)

    log = EventLog(config_hash=cfg.hash)
    db = KeyframeDatabase()
    thresh = AdaptiveThreshold(warmup_target=cfg.warmup_target,
                               fixed=cfg.fixed_threshold)
    entries: list[TrajectoryEntry] = []
    odometry: dict[int, Sim3Transform] = {}
    constraints: list[LoopConstraint] = []

    for kf in stream:
        if entries:
            rel = _fetch(providers.odometry, kf.frame_id, "odometry")
            odometry[kf.frame_id] = rel
            pose = sim3_compose(entries[-1].pose, rel)
        else:
            rel = None
            pose = Sim3Transform.identity()
        entries.append(TrajectoryEntry(kf.frame_id, kf.timestamp, pose))
        log.append("KeyframeIngested", kf.frame_id,
                   timestamp=kf.timestamp,
                   odometry=None if rel is None else _pose_to_json(rel))

        locals_ = np.asarray(
            _fetch(providers.descriptors, kf.frame_id, "descriptor"),
            dtype=np.float64,
        )
        try:
            desc = aggregate_vlad(locals_, vocab)
        except DimensionMismatch as exc:
            raise ProviderDesync(
                f"descriptor provider dim disagrees with vocabulary: {exc}"
            ) from exc
        db.insert(KeyframeRecord(kf.frame_id, kf.timestamp, desc, pose))

        best = best_candidate(db.query_top_k(
            desc, kf.frame_id, k=cfg.retrieval_k,
            exclusion_window=cfg.exclusion_window,
        ))
        if best is None:
            continue
        log.append("CandidateScored", kf.frame_id,
                   match_id=best.match_id, similarity=best.similarity)
        thresh.observe(best.similarity)
        if not thresh.is_loop(best.similarity):
            continue

        try:
            corr = providers.correspondences(kf.frame_id, best.match_id)
            constraint, reason = verify_loop(kf.frame_id, best.match_id,
                                             corr, cfg.ransac)
        except LoopforgeError as exc:
            log.append("LoopRejected", kf.frame_id,
                       match_id=best.match_id,
                       reason=f"error:{type(exc).__name__}")
            continue
        if constraint is None:
            log.append("LoopRejected", kf.frame_id,
                       match_id=best.match_id, reason=reason)
            continue
        log.append("LoopAccepted", kf.frame_id,
                   match_id=best.match_id,
                   inliers=constraint.inliers,
                   similarity=best.similarity,
                   threshold=thresh.loop_thresh,
                   transform=_pose_to_json(constraint.transform))
        constraints.append(constraint)
        entries = _reoptimize(entries, odometry, constraints, cfg, log, db)

    return entries, log


def replay(log: EventLog, stream, cfg: PipelineConfig) -> list[TrajectoryEntry]:
    """Rebuild the final trajectory from a log; bit-identical to run()."""
    if log.config_hash != cfg.hash:
        raise ConfigMismatch(
            f"log built with config {log.config_hash[:12]}..., "
            f"got {cfg.hash[:12]}..."
        )
    events = log.events
    pos = 0
    entries: list[TrajectoryEntry] = []
    odometry: dict[int, Sim3Transform] = {}
    constraints: list[LoopConstraint] = []

    for kf in stream:
        if pos >= len(events):
            raise ReplayMismatch(f"log ends before frame {kf.frame_id}")
        ev = events[pos]
        pos += 1
        if ev.kind != "KeyframeIngested" or ev.frame_id != kf.frame_id:
            raise ReplayMismatch(
                f"expected ingestion of frame {kf.frame_id}, "
                f"log has {ev.kind} for frame {ev.frame_id}"
            )
        if ev.payload["timestamp"] != kf.timestamp:
            raise ReplayMismatch(f"timestamp diverges at frame {kf.frame_id}")
        if entries:
            if ev.payload["odometry"] is None:
                raise ReplayMismatch(f"missing odometry at frame {kf.frame_id}")
            rel = _pose_from_json(ev.payload["odometry"])
            odometry[kf.frame_id] = rel
            pose = sim3_compose(entries[-1].pose, rel)
        else:
            pose = Sim3Transform.identity()
        entries.append(TrajectoryEntry(kf.frame_id, kf.timestamp, pose))

        while pos < len(events) and events[pos].kind != "KeyframeIngested":
            ev = events[pos]
            pos += 1
            if ev.kind == "LoopAccepted":
                constraints.append(LoopConstraint(
                    query_id=ev.frame_id,
                    match_id=ev.payload["match_id"],
                    transform=_pose_from_json(ev.payload["transform"]),
                    inliers=ev.payload["inliers"],
                ))
            elif ev.kind == "OptimizationStarted":
                nxt = events[pos] if pos < len(events) else None
                if nxt is not None and nxt.kind == "OptimizationFinished":
                    pos += 1
                    graph = _build_graph(entries, odometry, constraints,
                                         cfg.ransac.min_inliers)
                    poses, _ = optimize(graph, cfg.pgo)
                    entries = apply_correction(entries, poses)
                elif nxt is not None and nxt.kind == "LoopRejected":
                    pos += 1
                    constraints.pop()
                else:
                    raise ReplayMismatch(
                        "optimization start without outcome in log"
                    )
            # CandidateScored / LoopRejected carry no replay state

    if pos != len(events):
        raise ReplayMismatch(
            f"{len(events) - pos} event(s) left after the stream ended"
        )
    return entries
