"""Error taxonomy shared by every module.

Exit-code mapping for the CLI lives in ``hypalign.cli``; library code only
raises these types and never calls ``sys.exit``.
"""

from __future__ import annotations


class HypalignError(Exception):
    """Base class for all package errors."""


class ShapeError(HypalignError):
    """Tensor/array rank or dimension mismatch."""


class ContractError(HypalignError):
    """An operation was called outside its documented preconditions."""


class ValidationError(HypalignError):
    """Input data failed validation (rotations, configs, file formats)."""


class DegenerateYawError(HypalignError):
    """A yaw vector collapsed below the normalization threshold."""


class ConfigError(ValidationError):
    """Experiment configuration is structurally invalid."""


class TrainingError(HypalignError):
    """Training diverged (non-finite loss); carries the offending epoch."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class NumericalError(HypalignError):
    """A numerical routine left its valid domain (non-PSD covariance etc.)."""
