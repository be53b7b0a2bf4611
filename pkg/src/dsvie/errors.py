"""Exception types shared across the solver suite."""

from __future__ import annotations


class DsvieError(Exception):
    """Base class for all suite-specific errors."""


class InvalidArgumentError(DsvieError, ValueError):
    """A precondition on an argument was violated."""


class ResourceLimitError(DsvieError):
    """A configured memory/storage cap would be exceeded."""


class DegenerateDesignError(DsvieError):
    """Normal equations are singular and no ridge term was requested."""


class DriverEvaluationError(DsvieError):
    """A coefficient map returned a non-finite value.

    Carries the (i, j) grid location when known.
    """

    def __init__(self, message: str, i=None, j=None):
        super().__init__(message)
        self.i = i
        self.j = j


class CertificateError(DsvieError):
    """A declared Lipschitz certificate failed its probe-set spot check."""


class NonConvergenceError(DsvieError):
    """Fixed-point iteration hit max_iter before the tolerance.

    The partial solve report is attached as ``.report``.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class HypothesisViolationError(DsvieError):
    """Inputs violate the ordering hypotheses of the comparison harness."""


class TruncationError(DsvieError):
    """The inf-convolution grid radius cannot contain the minimizer."""


class SchemeFailureError(DsvieError):
    """Monotone approximation scheme broke its ordering beyond tolerance."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(DsvieError):
    """Experiment configuration is malformed or out of documented range."""
