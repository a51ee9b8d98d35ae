"""
Exception hierarchy shared by every freqpriv package.

CLI exit codes are derived from the class: validation-type errors map to 2,
numerical failures to 3.
"""

from typing import Any, Dict, Optional


class FreqPrivError(Exception):
    """Base class for all freqpriv errors."""

    exit_code = 2


class ShapeError(FreqPrivError, ValueError):
    """Tensor or box dimensions do not match what an operation requires."""


class ConfigError(FreqPrivError, ValueError):
    """Invalid or unknown configuration key/value."""


class ValidationError(FreqPrivError, ValueError):
    """Input data violates a documented invariant."""


class AnnotationParseError(ValidationError):
    """Annotation file is not valid JSON."""

    def __init__(self, path: Any, line: int, column: int, msg: str):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(f"{path}: parse error at line {line}, column {column}: {msg}")


class IntegrityError(ValidationError):
    """An annotation references a missing image or category."""

    def __init__(self, message: str, offending_id: Any = None):
        self.offending_id = offending_id
        super().__init__(message)


class NumericalError(FreqPrivError, ArithmeticError):
    """Non-finite values or undefined statistics."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        step: Optional[int] = None,
        breakdown: Optional[Dict[str, float]] = None,
        op_name: Optional[str] = None,
    ):
        self.step = step
        self.breakdown = breakdown or {}
        self.op_name = op_name
        super().__init__(message)


class CheckpointError(FreqPrivError, IOError):
    """Checkpoint file is truncated, corrupted or of an unknown version."""
