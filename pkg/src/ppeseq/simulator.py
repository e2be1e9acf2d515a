"""Seeded synthetic detection streams for testing and threshold tuning.

A :class:`Scenario` says when each protocol item is put on (donning) or taken
off (doffing). An item's state changes *after* its ``start_frame``: in a
donning scenario it is visible from ``start_frame + 1`` on, in a doffing
scenario it is last visible at ``start_frame``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .engine import SessionState, SessionStatus
from .errors import InvalidScenario
from .types import (
    ALL_CLASSES,
    AlertKind,
    ClassThresholds,
    DetectionEvent,
    FrameBatch,
    Mode,
    Outcome,
    PpeClass,
    SequenceSpec,
    Verdict,
)

# fixed, plausible boxes; geometry plays no part in sequencing
_BBOXES = {
    PpeClass.COVERALL: (0.5, 0.6, 0.5, 0.7),
    PpeClass.FACE_SHIELD: (0.5, 0.2, 0.2, 0.2),
    PpeClass.GLOVES: (0.4, 0.6, 0.1, 0.1),
    PpeClass.GOGGLES: (0.5, 0.18, 0.15, 0.06),
    PpeClass.MASK: (0.5, 0.25, 0.12, 0.1),
}


@dataclass(frozen=True)
class NoiseParams:
    hit_rate: float = 1.0
    false_positive_rate: float = 0.0
    conf_mean_worn: float = 1.0
    conf_mean_absent: float = 0.0
    conf_stddev: float = 0.0

    def __post_init__(self):
        for name in ("hit_rate", "false_positive_rate", "conf_mean_worn", "conf_mean_absent"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidScenario(f"{name} must be in [0, 1], got {v!r}")
        if not self.conf_stddev >= 0:
            raise InvalidScenario(f"conf_stddev must be >= 0, got {self.conf_stddev!r}")


@dataclass(frozen=True)
class NoiseModel:
    per_class: Mapping[PpeClass, NoiseParams]

    def __post_init__(self):
        full = {c: self.per_class.get(c, NoiseParams()) for c in ALL_CLASSES}
        object.__setattr__(self, "per_class", MappingProxyType(full))

    @classmethod
    def uniform(cls, **params) -> "NoiseModel":
        p = NoiseParams(**params)
        return cls({c: p for c in ALL_CLASSES})

    @classmethod
    def noise_free(cls) -> "NoiseModel":
        return cls.uniform()

    def with_class(self, c: PpeClass, **changes) -> "NoiseModel":
        d = dict(self.per_class)
        d[c] = replace(d[c], **changes)
        return NoiseModel(d)

    def __getitem__(self, c: PpeClass) -> NoiseParams:
        return self.per_class[c]


@dataclass(frozen=True)
class ScheduleEntry:
    step_index: int
    ppe_class: PpeClass
    start_frame: int


@dataclass(frozen=True)
class Scenario:
    spec: SequenceSpec
    step_schedule: Tuple[ScheduleEntry, ...]
    total_frames: int
    fps: float = 30.0
    injected_violation: Optional[Tuple[int, int]] = None
    margin_frames: int = 60

    def __post_init__(self):
        sched = tuple(
            e if isinstance(e, ScheduleEntry) else ScheduleEntry(*e) for e in self.step_schedule
        )
        object.__setattr__(self, "step_schedule", sched)
        if not self.fps > 0:
            raise InvalidScenario(f"fps must be > 0, got {self.fps!r}")
        seen = set()
        for e in sched:
            if not 0 <= e.step_index < len(self.spec.steps):
                raise InvalidScenario(f"step index {e.step_index} out of range")
            if e.step_index in seen:
                raise InvalidScenario(f"step {e.step_index} scheduled twice")
            seen.add(e.step_index)
            if e.ppe_class not in self.spec.steps[e.step_index].classes:
                raise InvalidScenario(
                    f"{e.ppe_class.value} is not an alternative for step {e.step_index}"
                )
            if e.start_frame < 0:
                raise InvalidScenario("start frames must be non-negative")
        starts = [e.start_frame for e in sched]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidScenario("start frames must be strictly increasing")
        last = starts[-1] if starts else 0
        if self.total_frames < last + self.margin_frames:
            raise InvalidScenario(
                f"total_frames {self.total_frames} leaves less than {self.margin_frames} "
                f"frames after the last scheduled event at {last}"
            )
        if self.injected_violation is not None:
            a, b = self.injected_violation
            if a == b or not (0 <= a < len(sched) and 0 <= b < len(sched)):
                raise InvalidScenario(f"invalid swap {self.injected_violation!r}")

    @property
    def mode(self) -> Mode:
        return self.spec.mode

    @classmethod
    def compliant(
        cls,
        spec: SequenceSpec,
        *,
        choices: Optional[Mapping[int, PpeClass]] = None,
        order: Optional[Sequence[int]] = None,
        first_frame: int = 30,
        spacing: int = 60,
        margin_frames: int = 60,
        fps: float = 30.0,
        injected_violation: Optional[Tuple[int, int]] = None,
    ) -> "Scenario":
        """Evenly spaced schedule covering every step.

        ``order`` permutes the steps (default: protocol order) and
        ``choices`` picks the alternative class per step (default: the first).
        """
        choices = choices or {}
        order = list(range(len(spec.steps))) if order is None else list(order)
        sched = tuple(
            ScheduleEntry(i, choices.get(i, spec.steps[i].classes[0]), first_frame + k * spacing)
            for k, i in enumerate(order)
        )
        last = sched[-1].start_frame if sched else first_frame
        return cls(spec, sched, last + margin_frames, fps, injected_violation, margin_frames)

    def effective_schedule(self) -> Tuple[ScheduleEntry, ...]:
        """Schedule after the injected swap (start frames exchanged), in time order."""
        sched = list(self.step_schedule)
        if self.injected_violation is not None:
            a, b = self.injected_violation
            ea, eb = sched[a], sched[b]
            sched[a] = replace(ea, start_frame=eb.start_frame)
            sched[b] = replace(eb, start_frame=ea.start_frame)
        return tuple(sorted(sched, key=lambda e: e.start_frame))

    @property
    def expected_compliant(self) -> bool:
        steps = [e.step_index for e in self.effective_schedule()]
        return steps == list(range(len(self.spec.steps)))

    def worn_intervals(self) -> Dict[PpeClass, Tuple[int, int]]:
        """Half-open frame ranges ``[lo, hi)`` during which each worn class is on."""
        out: Dict[PpeClass, Tuple[int, int]] = {}
        if self.mode is Mode.DONNING:
            for e in self.effective_schedule():
                out[e.ppe_class] = (e.start_frame + 1, self.total_frames)
        else:
            scheduled = {e.step_index for e in self.step_schedule}
            for i, step in enumerate(self.spec.steps):
                if i not in scheduled:
                    out[step.classes[0]] = (0, self.total_frames)
            for e in self.effective_schedule():
                out[e.ppe_class] = (0, e.start_frame + 1)
        return out


def generate(scenario: Scenario, noise: NoiseModel, seed: int) -> List[FrameBatch]:
    """Deterministic synthetic stream: one batch per frame, possibly empty."""
    rng = random.Random(seed)
    worn = scenario.worn_intervals()
    fps = scenario.fps
    plan = [(c, worn.get(c), noise[c], _BBOXES[c]) for c in ALL_CLASSES]
    out: List[FrameBatch] = []
    for f in range(scenario.total_frames):
        t_ms = int(round(f * 1000.0 / fps))
        dets = []
        for c, interval, p, bbox in plan:
            on = interval is not None and interval[0] <= f < interval[1]
            if on:
                rate, mean = p.hit_rate, p.conf_mean_worn
            else:
                rate, mean = p.false_positive_rate, p.conf_mean_absent
            if rng.random() < rate:
                conf = rng.gauss(mean, p.conf_stddev) if p.conf_stddev > 0 else mean
                dets.append(DetectionEvent(f, t_ms, c, min(max(conf, 0.0), 1.0), bbox))
        out.append(FrameBatch(f, t_ms, tuple(dets)))
    return out


def run_session(
    batches: Sequence[FrameBatch],
    spec: SequenceSpec,
    thresholds: Optional[ClassThresholds] = None,
) -> Tuple[Verdict, SessionState]:
    """Push a whole stream through a fresh session and close it at end of stream."""
    session = SessionState(spec, thresholds)
    for b in batches:
        if session.status is SessionStatus.FINISHED:
            break
        session.observe(b)
    return session.finish_session(), session


@dataclass
class SweepRow:
    noise: NoiseModel
    runs: int
    correct_fraction: float
    mean_latency_frames: Optional[float]
    outcomes: Dict[Outcome, int] = field(default_factory=dict)


def sweep(
    scenario: Scenario,
    noise_grid: Sequence[NoiseModel],
    seeds: Sequence[int],
    thresholds: Optional[ClassThresholds] = None,
) -> List[SweepRow]:
    """Verdict accuracy and detection latency per noise point.

    A run is correct when a compliant scenario yields ``COMPLIANT`` or a
    violating one yields ``NON_COMPLIANT``. Latency is measured per
    ``STEP_COMPLETED`` alert, in frames from the scheduled event.
    """
    if not noise_grid or not seeds:
        raise ValueError("sweep needs at least one noise point and one seed")
    expected = Outcome.COMPLIANT if scenario.expected_compliant else Outcome.NON_COMPLIANT
    start_of = {e.step_index: e.start_frame for e in scenario.effective_schedule()}
    rows = []
    for noise in noise_grid:
        correct = 0
        latencies: List[int] = []
        outcomes: Dict[Outcome, int] = {}
        for seed in seeds:
            verdict, session = run_session(generate(scenario, noise, seed), scenario.spec, thresholds)
            outcomes[verdict.outcome] = outcomes.get(verdict.outcome, 0) + 1
            correct += verdict.outcome is expected
            for a in session.alerts:
                if a.kind is AlertKind.STEP_COMPLETED and a.step_index in start_of:
                    latencies.append(a.frame_index - start_of[a.step_index])
        rows.append(
            SweepRow(
                noise=noise,
                runs=len(seeds),
                correct_fraction=correct / len(seeds),
                mean_latency_frames=sum(latencies) / len(latencies) if latencies else None,
                outcomes=outcomes,
            )
        )
    return rows
