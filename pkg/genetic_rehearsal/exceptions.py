"""Custom exceptions for the genetic rehearsal toolkit."""

from __future__ import annotations

from typing import Optional


class RehearsalError(Exception):
    """Base exception for all genetic rehearsal errors."""

    exit_code = 1


class ValidationError(RehearsalError):
    """Raised when an argument or precondition is out of range."""

    exit_code = 3


class ShapeError(ValidationError):
    """Raised when array dimensions do not line up."""


class ParseError(RehearsalError):
    """Raised when a binary file (IDX, checkpoint, dataset) is malformed."""

    exit_code = 4

    def __init__(self, message: str, *, offset: int, path: Optional[str] = None):
        self.message = message
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}byte {offset}: {message}")


class ConfigError(RehearsalError):
    """Raised when a run configuration is invalid; ``key`` is the dotted config key."""

    exit_code = 2

    def __init__(self, key: str, message: str):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")


class GenerationError(RehearsalError):
    """Raised when evolving one class / culture fails."""

    exit_code = 5

    def __init__(self, target_class: int, culture: int, message: str):
        self.target_class = target_class
        self.culture = culture
        self.message = message
        super().__init__(f"class {target_class}, culture {culture}: {message}")


class NumericalError(RehearsalError):
    """Raised when a covariance cannot be regularized into a factorizable matrix."""

    exit_code = 5
