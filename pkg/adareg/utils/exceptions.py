"""
Exceptions Module
Defines custom exceptions for the adaptive regularization toolkit.
"""

from typing import Any, Dict, Optional


class AdaRegError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 2

    def __init__(self, message: str, payload: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.payload = payload

    def to_dict(self) -> Dict[str, Any]:
        rv = dict(self.payload or ())
        rv['message'] = self.message
        rv['error'] = type(self).__name__
        return rv


class ValidationError(AdaRegError):
    """Exception raised when inputs or configuration violate a precondition."""

    exit_code = 1


class ShapeError(ValidationError):
    """Exception raised for incompatible tensor shapes."""


class ConfigError(ValidationError):
    """Exception raised for invalid run configurations."""


class NumericalError(AdaRegError):
    """Exception raised for runtime numeric failures."""

    exit_code = 2


class NonFiniteLossError(NumericalError):
    """Exception raised when a training objective stops being finite."""

    def __init__(self, message: str, terms: Dict[str, float], iteration: int):
        super().__init__(message, payload={'terms': terms, 'iteration': iteration})
        self.terms = terms
        self.iteration = iteration


class GradientCheckFailure(NumericalError):
    """Exception raised when analytic and numeric gradients disagree."""


class StorageError(AdaRegError):
    """Exception raised for file format and I/O failures."""

    exit_code = 3


class DatasetFormatError(StorageError):
    """Exception raised when a dataset manifest or blob is corrupt."""


class CheckpointError(StorageError):
    """Exception raised when a checkpoint cannot be read or is incomplete."""
