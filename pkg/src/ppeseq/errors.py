"""Exception hierarchy for ppeseq."""

from __future__ import annotations


class PpeSeqError(Exception):
    """Base class for all errors raised by this package."""


class UnknownClass(PpeSeqError, ValueError):
    def __init__(self, name: str):
        super().__init__(f"unknown PPE class: {name!r}")
        self.name = name


class MalformedRecord(PpeSeqError, ValueError):
    """A detection record failed validation.

    ``position`` identifies where the record came from (line number, frame
    object index, ...); it is ``None`` when the caller didn't supply one.
    """

    def __init__(self, reason: str, position: int | None = None):
        where = f" at record {position}" if position is not None else ""
        super().__init__(f"malformed record{where}: {reason}")
        self.reason = reason
        self.position = position


class NonMonotonicFrame(PpeSeqError, ValueError):
    def __init__(self, frame_index: int, last_frame_index: int):
        super().__init__(
            f"frame {frame_index} does not follow previously observed frame {last_frame_index}"
        )
        self.frame_index = frame_index
        self.last_frame_index = last_frame_index


class InvalidSpec(PpeSeqError, ValueError):
    pass


class InvalidPolicy(PpeSeqError, ValueError):
    pass


class InvalidScenario(PpeSeqError, ValueError):
    pass


class SessionFinished(PpeSeqError, RuntimeError):
    pass


class ConfigError(PpeSeqError, ValueError):
    pass
