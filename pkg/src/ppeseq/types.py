"""Domain vocabulary: PPE classes, detections, thresholds, sequences, alerts, verdicts."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Tuple

from .errors import InvalidSpec, UnknownClass

BBox = Tuple[float, float, float, float]  # (cx, cy, w, h), normalized to [0, 1]


class PpeClass(Enum):
    """The closed set of detector classes. Values are the canonical wire names."""

    COVERALL = "coverall"
    FACE_SHIELD = "face_shield"
    GLOVES = "gloves"
    GOGGLES = "goggles"
    MASK = "mask"

    def render(self) -> str:
        return self.value

    def __str__(self) -> str:
        return self.value


ALL_CLASSES: Tuple[PpeClass, ...] = tuple(PpeClass)

# keys are normalized: lowercase with spaces, underscores and hyphens removed
_CLASS_ALIASES = {
    "coverall": PpeClass.COVERALL,
    "ppe": PpeClass.COVERALL,
    "gown": PpeClass.COVERALL,
    "faceshield": PpeClass.FACE_SHIELD,
    "gloves": PpeClass.GLOVES,
    "goggles": PpeClass.GOGGLES,
    "googles": PpeClass.GOGGLES,
    "glasses": PpeClass.GOGGLES,
    "mask": PpeClass.MASK,
}
_SEPARATORS = re.compile(r"[\s_\-]+")


def parse_class(name: str) -> PpeClass:
    """Parse a class name, tolerating case, separators and the known aliases.

    >>> parse_class("Face Shield")
    <PpeClass.FACE_SHIELD: 'face_shield'>
    >>> parse_class("gown")
    <PpeClass.COVERALL: 'coverall'>
    """
    if not isinstance(name, str):
        raise UnknownClass(repr(name))
    key = _SEPARATORS.sub("", name).lower()
    try:
        return _CLASS_ALIASES[key]
    except KeyError:
        raise UnknownClass(name) from None


class Mode(Enum):
    DONNING = "donning"
    DOFFING = "doffing"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"mode must be 'donning' or 'doffing', got {value!r}") from None


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


@dataclass(frozen=True, slots=True)
class DetectionEvent:
    frame_index: int
    timestamp_ms: int
    ppe_class: PpeClass
    confidence: float
    bbox: BBox

    def __post_init__(self):
        if self.frame_index < 0 or self.timestamp_ms < 0:
            raise ValueError("frame_index and timestamp_ms must be non-negative")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")
        cx, cy, w, h = self.bbox
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0 and 0.0 < w <= 1.0 and 0.0 < h <= 1.0):
            raise ValueError(f"bbox {self.bbox!r} outside the normalized range")


@dataclass(frozen=True, slots=True)
class FrameBatch:
    """All detections for one frame. An empty batch still advances window bookkeeping."""

    frame_index: int
    timestamp_ms: int
    detections: Tuple[DetectionEvent, ...] = ()

    def __post_init__(self):
        if self.frame_index < 0 or self.timestamp_ms < 0:
            raise ValueError("frame_index and timestamp_ms must be non-negative")
        if not isinstance(self.detections, tuple):
            object.__setattr__(self, "detections", tuple(self.detections))
        for d in self.detections:
            if d.frame_index != self.frame_index:
                raise ValueError(
                    f"detection frame {d.frame_index} inside batch for frame {self.frame_index}"
                )


def make_batch(
    frame_index: int,
    timestamp_ms: int,
    hits: Iterable[Tuple[PpeClass, float]] = (),
    bbox: BBox = (0.5, 0.5, 0.2, 0.2),
) -> FrameBatch:
    """Shorthand for building a batch from ``(class, confidence)`` pairs."""
    return FrameBatch(
        frame_index,
        timestamp_ms,
        tuple(DetectionEvent(frame_index, timestamp_ms, c, conf, bbox) for c, conf in hits),
    )


@dataclass(frozen=True)
class ClassThreshold:
    """Gating parameters for one class."""

    th_confidence: float = 0.5
    th_frequency: int = 5
    window_frames: int = 30
    removal_window_frames: int = 45

    def __post_init__(self):
        if not (_is_number(self.th_confidence) and 0.0 < self.th_confidence <= 1.0):
            raise ValueError(f"th_confidence must be in (0, 1], got {self.th_confidence!r}")
        for name in ("th_frequency", "window_frames", "removal_window_frames"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.th_frequency > self.window_frames:
            raise ValueError(
                f"th_frequency ({self.th_frequency}) exceeds window_frames "
                f"({self.window_frames}); satisfaction would be unreachable"
            )


@dataclass(frozen=True)
class ClassThresholds:
    """Per-class thresholds covering all five classes."""

    per_class: Mapping[PpeClass, ClassThreshold]

    def __post_init__(self):
        missing = [c for c in ALL_CLASSES if c not in self.per_class]
        if missing:
            raise ValueError(f"thresholds missing for {', '.join(c.value for c in missing)}")
        object.__setattr__(self, "per_class", MappingProxyType(dict(self.per_class)))

    @classmethod
    def uniform(cls, threshold: Optional[ClassThreshold] = None, **overrides) -> "ClassThresholds":
        """Same threshold for every class; keyword args override ``ClassThreshold`` fields."""
        base = threshold or ClassThreshold(**overrides)
        return cls({c: base for c in ALL_CLASSES})

    @classmethod
    def from_partial(
        cls,
        partial: Mapping[PpeClass, ClassThreshold],
        default: Optional[ClassThreshold] = None,
    ) -> "ClassThresholds":
        default = default or ClassThreshold()
        return cls({c: partial.get(c, default) for c in ALL_CLASSES})

    def __getitem__(self, c: PpeClass) -> ClassThreshold:
        return self.per_class[c]


@dataclass(frozen=True)
class StepSpec:
    """One protocol step: any of ``classes`` completes it."""

    classes: Tuple[PpeClass, ...]
    label: str

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise InvalidSpec(f"step {self.label!r} has no classes")
        if len(set(classes)) != len(classes):
            raise InvalidSpec(f"step {self.label!r} lists a class twice")
        object.__setattr__(self, "classes", classes)


@dataclass(frozen=True)
class SequenceSpec:
    mode: Mode
    steps: Tuple[StepSpec, ...]
    _class_step: Mapping[PpeClass, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        steps = tuple(self.steps)
        if not steps:
            raise InvalidSpec("sequence has no steps")
        index = {}
        for i, step in enumerate(steps):
            for c in step.classes:
                if c in index:
                    raise InvalidSpec(f"{c.value} appears in steps {index[c]} and {i}")
                index[c] = i
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "_class_step", MappingProxyType(index))

    def step_of(self, c: PpeClass) -> Optional[int]:
        return self._class_step.get(c)

    @property
    def classes(self) -> Tuple[PpeClass, ...]:
        return tuple(self._class_step)

    def step_sets(self) -> list:
        return [frozenset(s.classes) for s in self.steps]


_GOWN = StepSpec((PpeClass.COVERALL,), "Gown")
_MASK = StepSpec((PpeClass.MASK,), "Mask")
_EYES = StepSpec((PpeClass.GOGGLES, PpeClass.FACE_SHIELD), "Goggles/Face shield")
_GLOVES = StepSpec((PpeClass.GLOVES,), "Gloves")

DONNING_SEQUENCE = SequenceSpec(Mode.DONNING, (_GOWN, _MASK, _EYES, _GLOVES))
# ties-unfastening strategy: the gown comes off before the mask
DOFFING_SEQUENCE = SequenceSpec(Mode.DOFFING, (_GLOVES, _EYES, _GOWN, _MASK))


def default_sequence(mode: "Mode | str") -> SequenceSpec:
    mode = Mode.parse(mode)
    return DONNING_SEQUENCE if mode is Mode.DONNING else DOFFING_SEQUENCE


class StepStatus(Enum):
    PENDING = "pending"
    DONE = "done"


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    status: StepStatus = StepStatus.PENDING
    completed_class: Optional[PpeClass] = None
    completed_at_frame: Optional[int] = None
    completed_at_ms: Optional[int] = None

    def __post_init__(self):
        filled = (self.completed_class, self.completed_at_frame, self.completed_at_ms)
        if (self.status is StepStatus.DONE) != all(v is not None for v in filled):
            raise ValueError("a Done step needs class, frame and time; a Pending step has none")

    @property
    def done(self) -> bool:
        return self.status is StepStatus.DONE


class AlertKind(Enum):
    STEP_COMPLETED = "step_completed"
    MISSED_STEP = "missed_step"
    SESSION_COMPLETE = "session_complete"
    SESSION_TIMEOUT = "session_timeout"


ALERT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Alert:
    """Real-time feedback event.

    For ``STEP_COMPLETED`` ``ppe_class`` is the class that completed the step;
    for ``MISSED_STEP`` it is the class whose early completion revealed the
    skipped step, and ``step_index``/``label`` name the skipped step.
    """

    kind: AlertKind
    frame_index: int
    timestamp_ms: int
    step_index: Optional[int] = None
    label: Optional[str] = None
    ppe_class: Optional[PpeClass] = None

    def to_json_dict(self) -> dict:
        out = {"v": ALERT_SCHEMA_VERSION, "kind": self.kind.value}
        if self.kind is AlertKind.STEP_COMPLETED:
            out.update(step_index=self.step_index, label=self.label, **{"class": self.ppe_class.value})
        elif self.kind is AlertKind.MISSED_STEP:
            out.update(step_index=self.step_index, label=self.label, triggered_by=self.ppe_class.value)
        out.update(frame=self.frame_index, t_ms=self.timestamp_ms)
        return out


class Outcome(Enum):
    COMPLIANT = "compliant"
    NON_COMPLIANT = "non_compliant"
    INCOMPLETE = "incomplete"


class EndReason(Enum):
    END_OF_STREAM = "end_of_stream"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    violations: Tuple[Alert, ...]
    pending_steps: Tuple[int, ...]
    step_records: Tuple[StepRecord, ...]
    session_duration_ms: int
    end_reason: EndReason = EndReason.END_OF_STREAM

    @property
    def compliant(self) -> bool:
        return self.outcome is Outcome.COMPLIANT
