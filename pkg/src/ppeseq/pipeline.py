"""Engine context: feeds batches through a session and fans alerts out to sinks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

from .engine import SessionState, SessionStatus
from .sinks import AlertDispatcher, describe_alert, format_ms
from .types import ClassThresholds, EndReason, FrameBatch, SequenceSpec, Verdict


def percentile(sorted_values: List[float], q: float) -> float:
    """Nearest-rank percentile of an already sorted list."""
    if not sorted_values:
        return 0.0
    rank = max(1, -(-len(sorted_values) * q // 100))
    return sorted_values[int(rank) - 1]


@dataclass
class RunStats:
    sessions: int = 0
    batches: int = 0
    detections: int = 0
    batches_ignored: int = 0
    records_dropped: int = 0
    detections_dropped: int = 0
    alerts: int = 0
    latencies_ns: List[int] = field(default_factory=list, repr=False)

    def latency_ms(self, q: float) -> float:
        return percentile(sorted(self.latencies_ns), q) / 1e6

    def summary(self) -> dict:
        return {
            "sessions": self.sessions,
            "batches": self.batches,
            "detections": self.detections,
            "records_dropped": self.records_dropped,
            "detections_dropped": self.detections_dropped,
            "alerts": self.alerts,
            "p50_batch_ms": round(self.latency_ms(50), 4),
            "p99_batch_ms": round(self.latency_ms(99), 4),
        }


class SessionRunner:
    """Batch consumer that owns the current session.

    A session starts lazily with the first batch after construction or
    after :meth:`end_stream`. Batches arriving once the session has
    finished (all steps done, or timed out) are counted and ignored until
    the stream ends. Per-batch latency runs from batch hand-off to the last
    alert being queued for the sinks.
    """

    def __init__(
        self,
        spec: SequenceSpec,
        thresholds: Optional[ClassThresholds] = None,
        *,
        dispatcher: Optional[AlertDispatcher] = None,
        timeout_s: Optional[float] = 300.0,
        on_verdict: Optional[Callable[[SessionState, Verdict], None]] = None,
    ):
        self.spec = spec
        self.thresholds = thresholds
        self.dispatcher = dispatcher
        self.timeout_ms = None if timeout_s is None else int(round(timeout_s * 1000))
        self.on_verdict = on_verdict
        self.stats = RunStats()
        self.session: Optional[SessionState] = None
        self.verdicts: List[Verdict] = []

    def _new_session(self) -> SessionState:
        self.stats.sessions += 1
        return SessionState(self.spec, self.thresholds, self.timeout_ms)

    def feed(self, batch: FrameBatch) -> None:
        t0 = time.perf_counter_ns()
        session = self.session
        if session is None:
            session = self.session = self._new_session()
        self.stats.batches += 1
        self.stats.detections += len(batch.detections)
        if session.status is SessionStatus.FINISHED:
            self.stats.batches_ignored += 1
            return
        alerts = session.observe(batch)
        if alerts:
            self.stats.alerts += len(alerts)
            if self.dispatcher is not None:
                for a in alerts:
                    self.dispatcher.submit(a)
        self.stats.latencies_ns.append(time.perf_counter_ns() - t0)

    def end_stream(self, reason: EndReason = EndReason.END_OF_STREAM) -> Verdict:
        session = self.session if self.session is not None else self._new_session()
        n = len(session.alerts)
        verdict = session.finish_session(reason)
        for a in session.alerts[n:]:
            self.stats.alerts += 1
            if self.dispatcher is not None:
                self.dispatcher.submit(a)
        if self.dispatcher is not None:
            self.dispatcher.flush()
        self.verdicts.append(verdict)
        self.session = None
        if self.on_verdict is not None:
            self.on_verdict(session, verdict)
        return verdict


def format_report(session: SessionState, verdict: Verdict) -> str:
    spec = session.spec
    lines = [f"{spec.mode.value} session: {verdict.outcome.value.upper()} ({verdict.end_reason.value})"]
    for rec in verdict.step_records:
        label = spec.steps[rec.step_index].label
        if rec.done:
            lines.append(
                f"  step {rec.step_index} {label:<20} done   {rec.completed_class.value:<12} "
                f"frame {rec.completed_at_frame:>6}  t={format_ms(rec.completed_at_ms)}"
            )
        else:
            lines.append(f"  step {rec.step_index} {label:<20} PENDING")
    if session.alerts:
        lines.append("  alerts:")
        for a in session.alerts:
            lines.append(f"    [{format_ms(a.timestamp_ms)}] frame {a.frame_index:>6}  {describe_alert(a)}")
    if verdict.violations:
        missed = ", ".join(f"{a.label} (step {a.step_index})" for a in verdict.violations)
        lines.append(f"  missed: {missed}")
    lines.append(f"  duration: {verdict.session_duration_ms / 1000:.3f} s")
    return "\n".join(lines)


@dataclass
class BenchResult:
    batches: int
    detections: int
    elapsed_s: float
    events_per_s: float
    p50_ms: float
    p99_ms: float


def bench(batches: List[FrameBatch], spec: SequenceSpec, thresholds: Optional[ClassThresholds] = None) -> BenchResult:
    """Time the engine alone (no sinks) over a pre-built stream."""
    runner = SessionRunner(spec, thresholds, timeout_s=None)
    start = time.perf_counter()
    for b in batches:
        runner.feed(b)
    elapsed = time.perf_counter() - start
    runner.end_stream()
    st = runner.stats
    return BenchResult(
        batches=st.batches,
        detections=st.detections,
        elapsed_s=elapsed,
        events_per_s=st.detections / elapsed if elapsed > 0 else float("inf"),
        p50_ms=st.latency_ms(50),
        p99_ms=st.latency_ms(99),
    )
