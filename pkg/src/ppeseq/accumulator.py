"""Per-class frequency/confidence gating over a sliding frame window.

A class becomes *satisfied* once ``th_frequency`` frames inside the last
``window_frames`` frames carried at least one detection of it with
confidence >= ``th_confidence``. In doffing mode a satisfied class that then
goes ``removal_window_frames`` consecutive frames without a qualifying
detection is declared removed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

from .errors import InvalidPolicy, NonMonotonicFrame
from .types import ALL_CLASSES, ClassThresholds, FrameBatch, Mode, PpeClass


@dataclass(frozen=True)
class ThresholdPolicy:
    """Linear map from per-class AP to a confidence threshold, clamped to [floor, ceil]."""

    alpha: float = 0.5
    floor: float = 0.25
    ceil: float = 0.9

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidPolicy(f"alpha must be > 0, got {self.alpha!r}")
        if not 0 < self.floor <= self.ceil <= 1:
            raise InvalidPolicy(
                f"need 0 < floor <= ceil <= 1, got floor={self.floor!r} ceil={self.ceil!r}"
            )


def derive_confidence_threshold(ap: float, policy: ThresholdPolicy = ThresholdPolicy()) -> float:
    if not 0.0 <= ap <= 1.0:
        raise ValueError(f"AP must be in [0, 1], got {ap!r}")
    return min(max(policy.alpha * ap, policy.floor), policy.ceil)


class TransitionKind(Enum):
    BECAME_SATISFIED = "became_satisfied"
    BECAME_ABSENT = "became_absent"


@dataclass(frozen=True, slots=True)
class Transition:
    ppe_class: PpeClass
    kind: TransitionKind
    frame_index: int
    timestamp_ms: int


class _ClassState:
    __slots__ = ("hits", "absent_run", "satisfied", "satisfied_at")

    def __init__(self):
        self.hits: deque = deque()  # frame indices of qualifying frames inside the window
        self.absent_run = 0
        self.satisfied = False
        self.satisfied_at: Optional[Tuple[int, int]] = None


class ThresholdAccumulator:
    """Streaming gate for all five classes. Single-writer; not thread-safe."""

    def __init__(self, thresholds: Optional[ClassThresholds] = None, mode: Mode = Mode.DONNING):
        self.thresholds = thresholds or ClassThresholds.uniform()
        self.mode = Mode.parse(mode)
        self._states: Dict[PpeClass, _ClassState] = {c: _ClassState() for c in ALL_CLASSES}
        # hot loop reads these instead of going through the mapping proxies
        self._plan = [(c, self._states[c], self.thresholds[c]) for c in ALL_CLASSES]
        self._th_conf = {c: self.thresholds[c].th_confidence for c in ALL_CLASSES}
        self.last_frame: Optional[int] = None

    def observe(self, batch: FrameBatch) -> List[Transition]:
        f = batch.frame_index
        last = self.last_frame
        if last is not None and f <= last:
            raise NonMonotonicFrame(f, last)
        # frames skipped since the last batch count as frames without detections
        step = 1 if last is None else f - last
        self.last_frame = f

        th_conf = self._th_conf
        qualifying = {d.ppe_class for d in batch.detections if d.confidence >= th_conf[d.ppe_class]}
        doffing = self.mode is Mode.DOFFING
        out: List[Transition] = []
        for c, st, th in self._plan:
            hits = st.hits
            oldest_kept = f - th.window_frames
            while hits and hits[0] <= oldest_kept:
                hits.popleft()
            if doffing and st.satisfied and step > 1 and st.absent_run + step - 1 >= th.removal_window_frames:
                # removal completed inside the gap, before this frame's detections
                st.satisfied = False
                st.satisfied_at = None
                hits.clear()
                out.append(Transition(c, TransitionKind.BECAME_ABSENT, f, batch.timestamp_ms))
            if c in qualifying:
                hits.append(f)
                st.absent_run = 0
            else:
                st.absent_run += step
            if not st.satisfied:
                if len(hits) >= th.th_frequency:
                    st.satisfied = True
                    st.satisfied_at = (f, batch.timestamp_ms)
                    out.append(Transition(c, TransitionKind.BECAME_SATISFIED, f, batch.timestamp_ms))
            elif doffing and st.absent_run >= th.removal_window_frames:
                st.satisfied = False
                st.satisfied_at = None
                hits.clear()
                out.append(Transition(c, TransitionKind.BECAME_ABSENT, f, batch.timestamp_ms))
        return out

    def is_satisfied(self, c: PpeClass) -> bool:
        return self._states[c].satisfied

    def satisfied_at(self, c: PpeClass) -> Optional[Tuple[int, int]]:
        return self._states[c].satisfied_at

    def hit_count(self, c: PpeClass) -> int:
        """Qualifying frames currently inside the class's window (as of the last batch)."""
        return len(self._states[c].hits)

    def consecutive_absent_frames(self, c: PpeClass) -> int:
        return self._states[c].absent_run

    def reset(self, c: Optional[PpeClass] = None) -> None:
        """Return one class (or, with no argument, the whole accumulator) to its initial state."""
        if c is None:
            for cls in ALL_CLASSES:
                self._reset_class(cls)
            self.last_frame = None
        else:
            self._reset_class(c)

    def _reset_class(self, c: PpeClass) -> None:
        st = self._states[c]
        st.hits.clear()
        st.absent_run = 0
        st.satisfied = False
        st.satisfied_at = None

