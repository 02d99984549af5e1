"""Exception types shared across the package."""


class HierarchyError(ValueError):
    """A hierarchy, rate set or constant set violates its invariants."""


class InfeasibleToleranceError(ValueError):
    """The requested tolerance cannot be reached under the given constraints."""


class UnsupportedCaseError(ValueError):
    """The requested quantity is only defined for a different chi regime."""


class CalibrationUnavailable(RuntimeError):
    """Not enough level statistics to fit the model constants."""


class ConvergenceError(RuntimeError):
    """The continuation loop did not reach the requested tolerance.

    The partial per-iteration trace is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
