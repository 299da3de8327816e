"""Keyframe database: append-only store with temporally gated retrieval.

Retrieval is an exact linear scan over every stored descriptor; at the
sequence lengths this package targets (a few thousand keyframes) that is
both fast enough and trivially equal to the brute-force oracle the tests
check against. One lock serializes writers and readers so a query never
observes a partially inserted record.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .descriptors import cosine_similarity
from .errors import NonMonotonicFrameId
from .geometry import Sim3Transform


@dataclass(frozen=True)
class LoopCandidate:
    query_id: int
    match_id: int
    similarity: float


@dataclass
class KeyframeRecord:
    frame_id: int
    timestamp: float
    descriptor: np.ndarray
    pose: Sim3Transform = field(default_factory=Sim3Transform.identity)


class KeyframeDatabase:
    def __init__(self):
        self._records: list[KeyframeRecord] = []
        self._by_id: dict[int, KeyframeRecord] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def insert(self, record: KeyframeRecord) -> None:
        with self._lock:
            if self._records:
                last = self._records[-1]
                if record.frame_id <= last.frame_id:
                    raise NonMonotonicFrameId(
                        f"frame id {record.frame_id} not above last {last.frame_id}"
                    )
                if record.timestamp < last.timestamp:
                    raise ValueError(
                        f"timestamp {record.timestamp} below last {last.timestamp}"
                    )
            self._records.append(record)
            self._by_id[record.frame_id] = record

    def get(self, frame_id: int) -> KeyframeRecord:
        with self._lock:
            return self._by_id[frame_id]

    def update_pose(self, frame_id: int, pose: Sim3Transform) -> None:
        with self._lock:
            self._by_id[frame_id].pose = pose

    def records(self) -> list[KeyframeRecord]:
        """Snapshot copy of the record list (records themselves are shared)."""
        with self._lock:
            return list(self._records)

    def query_top_k(
        self,
        query: np.ndarray,
        query_id: int,
        k: int = 5,
        exclusion_window: int = 50,
    ) -> list[LoopCandidate]:
        """Top-k most similar stored keyframes outside the exclusion window.

        Sorted by similarity descending with ties going to the lower frame
        id; equal to brute-force scoring of every eligible record.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if exclusion_window < 0:
            raise ValueError("exclusion_window must be >= 0")
        with self._lock:
            eligible = [
                r for r in self._records
                if abs(query_id - r.frame_id) > exclusion_window
            ]
            scored = [
                LoopCandidate(
                    query_id=query_id,
                    match_id=r.frame_id,
                    similarity=cosine_similarity(query, r.descriptor),
                )
                for r in eligible
            ]
        scored.sort(key=lambda c: (-c.similarity, c.match_id))
        return scored[:k]


def best_candidate(candidates: list[LoopCandidate]) -> LoopCandidate | None:
    """Highest-similarity candidate of a ranked list, or None when empty."""
    return candidates[0] if candidates else None
