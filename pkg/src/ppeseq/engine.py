"""Sequence verification: turns accumulator transitions into alerts and a verdict."""

from __future__ import annotations

from enum import Enum
from typing import List, Optional, Set

from .accumulator import ThresholdAccumulator, Transition, TransitionKind
from .errors import InvalidSpec, SessionFinished
from .types import (
    Alert,
    AlertKind,
    ClassThresholds,
    EndReason,
    FrameBatch,
    Mode,
    Outcome,
    PpeClass,
    SequenceSpec,
    StepRecord,
    StepStatus,
    Verdict,
)


class SessionStatus(Enum):
    RUNNING = "running"
    FINISHED = "finished"


class SessionState:
    """One monitored donning or doffing session.

    Feed it either raw frame batches via :meth:`observe` (which runs the
    session's own threshold accumulator) or pre-computed transitions via
    :meth:`on_transition`. Out-of-order completions are recorded as
    ``MISSED_STEP`` alerts and the session keeps going.
    """

    def __init__(
        self,
        spec: SequenceSpec,
        thresholds: Optional[ClassThresholds] = None,
        timeout_ms: Optional[int] = None,
    ):
        if not isinstance(spec, SequenceSpec):
            raise InvalidSpec(f"expected a SequenceSpec, got {type(spec).__name__}")
        self.spec = spec
        self.mode = spec.mode
        self.records: List[StepRecord] = [StepRecord(i) for i in range(len(spec.steps))]
        self.alerts: List[Alert] = []
        self.status = SessionStatus.RUNNING
        self.accumulator = ThresholdAccumulator(thresholds, spec.mode)
        self.timeout_ms = timeout_ms
        self.verdict: Optional[Verdict] = None
        # doffing: removals only count once every step has been seen worn
        self._seen_worn: Set[PpeClass] = set()
        self.baseline_established = spec.mode is Mode.DONNING
        self._first_ms: Optional[int] = None
        self._last_ms = 0
        self._last_frame = 0

    @property
    def cursor(self) -> int:
        for r in self.records:
            if r.status is StepStatus.PENDING:
                return r.step_index
        return len(self.records)

    @property
    def pending_steps(self) -> List[int]:
        return [r.step_index for r in self.records if r.status is StepStatus.PENDING]

    @property
    def violations(self) -> List[Alert]:
        return [a for a in self.alerts if a.kind is AlertKind.MISSED_STEP]

    def _touch(self, frame_index: int, timestamp_ms: int) -> None:
        if self._first_ms is None:
            self._first_ms = timestamp_ms
        self._last_frame = frame_index
        self._last_ms = timestamp_ms

    def observe(self, batch: FrameBatch) -> List[Alert]:
        """Run one frame through the accumulator and sequence check."""
        if self.status is SessionStatus.FINISHED:
            raise SessionFinished("session already finished")
        self._touch(batch.frame_index, batch.timestamp_ms)
        if self.timeout_ms is not None and batch.timestamp_ms - self._first_ms >= self.timeout_ms:
            n = len(self.alerts)
            self.finish_session(EndReason.TIMEOUT)
            return self.alerts[n:]
        transitions = self.accumulator.observe(batch)
        if len(transitions) > 1:
            # same-frame transitions are simultaneous; take them in protocol order
            n_steps = len(self.spec.steps)
            transitions.sort(key=lambda t: _step_key(self.spec, t, n_steps))
        out: List[Alert] = []
        for t in transitions:
            if self.status is SessionStatus.FINISHED:
                break
            out.extend(self.on_transition(t))
        return out

    def on_transition(self, t: Transition) -> List[Alert]:
        if self.status is SessionStatus.FINISHED:
            raise SessionFinished("session already finished")
        self._touch(t.frame_index, t.timestamp_ms)
        step = self.spec.step_of(t.ppe_class)
        if step is None:
            return []

        if self.mode is Mode.DONNING:
            if t.kind is not TransitionKind.BECAME_SATISFIED:
                return []
        else:
            if t.kind is TransitionKind.BECAME_SATISFIED:
                if not self.baseline_established:
                    self._seen_worn.add(t.ppe_class)
                    self.baseline_established = all(
                        any(c in self._seen_worn for c in s.classes) for s in self.spec.steps
                    )
                return []
            if not self.baseline_established:
                return []

        if self.records[step].status is StepStatus.DONE:
            return []

        out: List[Alert] = []
        for j in range(step):
            if self.records[j].status is StepStatus.PENDING:
                out.append(
                    Alert(
                        AlertKind.MISSED_STEP,
                        t.frame_index,
                        t.timestamp_ms,
                        step_index=j,
                        label=self.spec.steps[j].label,
                        ppe_class=t.ppe_class,
                    )
                )
        self.records[step] = StepRecord(
            step, StepStatus.DONE, t.ppe_class, t.frame_index, t.timestamp_ms
        )
        out.append(
            Alert(
                AlertKind.STEP_COMPLETED,
                t.frame_index,
                t.timestamp_ms,
                step_index=step,
                label=self.spec.steps[step].label,
                ppe_class=t.ppe_class,
            )
        )
        if all(r.status is StepStatus.DONE for r in self.records):
            out.append(Alert(AlertKind.SESSION_COMPLETE, t.frame_index, t.timestamp_ms))
            self.status = SessionStatus.FINISHED
        self.alerts.extend(out)
        return out

    def finish_session(self, reason: EndReason = EndReason.END_OF_STREAM) -> Verdict:
        """Close the session and judge it. Calling it again returns the same verdict."""
        if self.verdict is not None:
            return self.verdict
        pending = self.pending_steps
        if reason is EndReason.TIMEOUT and pending:
            self.alerts.append(Alert(AlertKind.SESSION_TIMEOUT, self._last_frame, self._last_ms))
        self.status = SessionStatus.FINISHED
        violations = tuple(self.violations)
        if violations:
            outcome = Outcome.NON_COMPLIANT
        elif pending:
            outcome = Outcome.INCOMPLETE
        else:
            outcome = Outcome.COMPLIANT
        self.verdict = Verdict(
            outcome=outcome,
            violations=violations,
            pending_steps=tuple(pending),
            step_records=tuple(self.records),
            session_duration_ms=self._last_ms - (self._first_ms or 0),
            end_reason=reason,
        )
        return self.verdict


def _step_key(spec: SequenceSpec, t: Transition, n_steps: int) -> int:
    step = spec.step_of(t.ppe_class)
    return n_steps if step is None else step


def start_session(
    spec: SequenceSpec,
    mode: "Mode | str | None" = None,
    thresholds: Optional[ClassThresholds] = None,
    timeout_ms: Optional[int] = None,
) -> SessionState:
    if not isinstance(spec, SequenceSpec):
        raise InvalidSpec(f"expected a SequenceSpec, got {type(spec).__name__}")
    if mode is not None and Mode.parse(mode) is not spec.mode:
        raise InvalidSpec(f"sequence is a {spec.mode.value} sequence, not {Mode.parse(mode).value}")
    return SessionState(spec, thresholds, timeout_ms)
