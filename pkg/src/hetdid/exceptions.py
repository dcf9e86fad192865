"""Exception types shared across the package."""


class HetDidError(Exception):
    """Base class for all hetdid errors."""


class PanelFormatError(HetDidError, ValueError):
    """Input panel data violates the expected layout or invariants."""


class SpecValidationError(HetDidError, ValueError):
    """A learner spec or run config carries invalid values."""


class ConvergenceError(HetDidError, RuntimeError):
    """An iterative solver diverged past its safeguards."""


class CrossFitError(HetDidError, RuntimeError):
    """A fold-level fit failed; the message carries the fold index."""


class SingularSystemError(HetDidError, RuntimeError):
    """A normal system is singular at the requested penalty."""

    def __init__(self, message, suggested_penalty=None):
        super().__init__(message)
        self.suggested_penalty = suggested_penalty


class NonConvexSystemError(HetDidError, RuntimeError):
    """A sample loss is indefinite even after regularization."""

    def __init__(self, message, smallest_eigenvalue=None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class WeakInstrumentError(HetDidError, RuntimeError):
    """The first-stage moment is numerically indistinguishable from zero."""
