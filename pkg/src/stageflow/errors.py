"""Exception hierarchy shared by every stageflow module."""

from __future__ import annotations


class StageflowError(Exception):
    """Base class; ``kind`` is the short tag used in CLI error lines."""

    kind = "error"


class InvalidArgumentError(StageflowError, ValueError):
    kind = "invalid-argument"


class ShapeError(StageflowError, ValueError):
    kind = "shape"


class NumericError(StageflowError, ArithmeticError):
    kind = "numeric"


class ConflictError(StageflowError):
    kind = "conflict"


class NotFoundError(StageflowError, LookupError):
    kind = "not-found"


class UnsupportedError(StageflowError):
    kind = "unsupported"


class TrainingFailure(NumericError):
    kind = "training-failure"

    def __init__(self, step: int, message: str):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step


class CheckpointVersionError(StageflowError):
    kind = "version"


class CorruptCheckpointError(StageflowError):
    kind = "corrupt-file"


class ScheduleParseError(InvalidArgumentError):
    kind = "parse"

    def __init__(self, text: str, position: int, message: str):
        super().__init__(f"{message} (at position {position} in {text!r})")
        self.text = text
        self.position = position


class DegenerateScheduleError(InvalidArgumentError):
    kind = "degenerate-schedule"


class TooLargeError(InvalidArgumentError):
    kind = "too-large"


class ConfigError(InvalidArgumentError):
    kind = "config"

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
