"""
Exception hierarchy for Ord2Seq.

Every error subclasses the builtin a caller would naturally catch, so
``except ValueError`` keeps working around codec and config calls.
"""

from typing import List, Optional


class Ord2SeqError(Exception):
    """Base class for all Ord2Seq errors."""


class InvalidCategoryCountError(Ord2SeqError, ValueError):
    pass


class InvalidCategoryError(Ord2SeqError, ValueError):
    pass


class InvalidPathError(Ord2SeqError, ValueError):
    pass


class InvalidPrefixError(Ord2SeqError, ValueError):
    pass


class ShapeError(Ord2SeqError, ValueError):
    """Operand shapes are incompatible. The message names both shapes."""

    def __init__(self, op: str, left_shape, right_shape):
        self.op = op
        self.left_shape = tuple(left_shape)
        self.right_shape = tuple(right_shape)
        super().__init__(
            f"{op}: incompatible shapes {self.left_shape} and {self.right_shape}"
        )


class ConfigError(Ord2SeqError, ValueError):
    pass


class SpecError(Ord2SeqError, ValueError):
    pass


class CheckpointFormatError(Ord2SeqError, ValueError):
    pass


class MissingGradientError(Ord2SeqError, RuntimeError):
    pass


class NaNLossError(Ord2SeqError, RuntimeError):
    """Training produced a non-finite loss; diagnostics were dumped to disk."""

    def __init__(self, message: str, diagnostics_path: Optional[str] = None):
        self.diagnostics_path = diagnostics_path
        super().__init__(message)


class PartialResultError(Ord2SeqError, RuntimeError):
    """A multi-run command failed after some of its runs completed."""

    def __init__(self, message: str, completed: List[str]):
        self.completed = list(completed)
        super().__init__(f"{message} (completed: {', '.join(self.completed) or 'none'})")
