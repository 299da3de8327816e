"""Adaptive similarity threshold.

Warmup: the first `warmup_target` valid top-1 scores are collected and
their median becomes the initial threshold; no loop can be declared
before that. Afterwards each score enters a fixed-size ring buffer and
the threshold ratchets up to the window median whenever that median
exceeds it, so the threshold is monotone non-decreasing for the rest of
the run. A fixed override disables the state machine entirely.
"""

from __future__ import annotations

import math
from collections import deque
from statistics import median

from .errors import NonFiniteScore


class AdaptiveThreshold:
    """Single-owner mutable state machine; not thread-safe by design."""

    def __init__(
        self,
        warmup_target: int = 5,
        window_size: int = 20,
        fixed: float | None = None,
    ):
        if warmup_target < 1:
            raise ValueError("warmup_target must be >= 1")
        if window_size < 1:
            raise ValueError("window_size must be >= 1")
        if fixed is not None and not math.isfinite(fixed):
            raise ValueError("fixed threshold must be finite")
        self.warmup_target = warmup_target
        self.fixed = fixed
        self._warmup: list[float] = []
        self._window: deque[float] = deque(maxlen=window_size)
        self._loop_thresh: float | None = None

    @property
    def loop_thresh(self) -> float | None:
        if self.fixed is not None:
            return self.fixed
        return self._loop_thresh

    @property
    def max_thresh(self) -> float:
        t = self.loop_thresh
        return float("-inf") if t is None else t

    @property
    def warmup_count(self) -> int:
        return len(self._warmup)

    def observe(self, score: float) -> None:
        """Feed one valid top-1 similarity score."""
        score = float(score)
        if not math.isfinite(score):
            raise NonFiniteScore(f"similarity score must be finite, got {score}")
        if self.fixed is not None:
            return
        if self._loop_thresh is None:
            self._warmup.append(score)
            if len(self._warmup) == self.warmup_target:
                self._loop_thresh = median(self._warmup)
        else:
            self._window.append(score)
            self._loop_thresh = max(self._loop_thresh, median(self._window))

    def is_loop(self, score: float) -> bool:
        """True iff a threshold exists and the score reaches it (inclusive)."""
        t = self.loop_thresh
        return t is not None and score >= t
