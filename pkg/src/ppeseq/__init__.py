"""Real-time PPE donning/doffing sequence compliance from object-detection streams."""

__version__ = "0.1.0"

from .accumulator import ThresholdAccumulator, ThresholdPolicy, Transition, TransitionKind, derive_confidence_threshold
from .engine import SessionState, SessionStatus, start_session
from .errors import (
    ConfigError,
    InvalidPolicy,
    InvalidScenario,
    InvalidSpec,
    MalformedRecord,
    NonMonotonicFrame,
    PpeSeqError,
    SessionFinished,
    UnknownClass,
)
from .types import (
    Alert,
    AlertKind,
    ClassThreshold,
    ClassThresholds,
    DetectionEvent,
    EndReason,
    FrameBatch,
    Mode,
    Outcome,
    PpeClass,
    SequenceSpec,
    StepRecord,
    StepSpec,
    StepStatus,
    Verdict,
    default_sequence,
    parse_class,
)

__all__ = [
    "__version__",
    "ThresholdAccumulator",
    "ThresholdPolicy",
    "Transition",
    "TransitionKind",
    "derive_confidence_threshold",
    "SessionState",
    "SessionStatus",
    "start_session",
    "ConfigError",
    "InvalidPolicy",
    "InvalidScenario",
    "InvalidSpec",
    "MalformedRecord",
    "NonMonotonicFrame",
    "PpeSeqError",
    "SessionFinished",
    "UnknownClass",
    "Alert",
    "AlertKind",
    "ClassThreshold",
    "ClassThresholds",
    "DetectionEvent",
    "EndReason",
    "FrameBatch",
    "Mode",
    "Outcome",
    "PpeClass",
    "SequenceSpec",
    "StepRecord",
    "StepSpec",
    "StepStatus",
    "Verdict",
    "default_sequence",
    "parse_class",
]
