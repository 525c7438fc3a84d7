"""Exception types shared across the package."""
from __future__ import annotations


class InpaintError(Exception):
    """Base class for all package errors."""


class ShapeError(InpaintError, ValueError):
    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


class NumericError(InpaintError, ArithmeticError):
    pass


class ScheduleError(InpaintError, ValueError):
    """Bad circular schedule or window plan (e.g. window does not divide the circle)."""


class TrainingError(InpaintError, RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class FormatError(InpaintError, ValueError):
    """Malformed dataset, tensor or checkpoint file."""


class ConfigError(InpaintError, ValueError):
    pass


class BackendError(InpaintError, RuntimeError):
    """Captioner backend failed to answer."""


class PipelineError(InpaintError, RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
