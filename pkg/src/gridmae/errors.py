"""Exception hierarchy shared across the package.

Validation problems (bad input data, shape disagreements) and numeric
failures (singular systems, non-finite losses) are kept as separate
branches so the CLI can map them to distinct exit codes.
"""

from __future__ import annotations


class GridMaeError(Exception):
    """Base class for all package errors."""


class ValidationError(GridMaeError):
    """Input data violates a documented precondition or invariant."""


class NumericError(GridMaeError):
    """A numeric procedure failed (singular system, divergence, NaN)."""


# --- case file handling ---------------------------------------------------

class MalformedTable(ValidationError):
    """A case-file table row could not be parsed."""


class DanglingReference(ValidationError):
    """A generator or branch references a bus id that does not exist."""


class NoSlack(ValidationError):
    """The case contains no slack bus."""


class MultipleSlack(NoSlack):
    """The case contains more than one slack bus."""


class Disconnected(ValidationError):
    """The grid graph is not weakly connected."""


class SerializationError(ValidationError):
    """A case contains values (NaN/inf) that cannot round-trip as text."""


# --- graph kernels --------------------------------------------------------

class ZeroImpedance(ValidationError):
    """A branch has |z| = 0."""


class DimensionMismatch(ValidationError):
    """A state vector's length disagrees with the grid's bus count."""


class ShapeMismatch(ValidationError):
    """Array shapes disagree (mask vs sample, prediction vs state)."""


# --- solvers --------------------------------------------------------------

class SingularJacobian(NumericError):
    """The Newton step matrix is singular."""

    def __init__(self, iteration: int):
        super().__init__(f"singular Jacobian at iteration {iteration}")
        self.iteration = iteration


class SingularSystem(NumericError):
    """The DC susceptance system is singular."""


# --- scenario generation --------------------------------------------------

class InvalidRef(ValidationError):
    """An element reference does not name an existing branch/generator."""


class EmptyOutput(NumericError):
    """Dataset generation produced zero converged samples."""


# --- masking / model ------------------------------------------------------

class BadAlpha(ValidationError):
    """Masking probability outside [0, 1]."""


class NonFiniteLoss(NumericError):
    """Loss or gradients became NaN/inf during training."""

    def __init__(self, message: str, last_checkpoint: str | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
