"""Exception types raised across the package."""


class SpocError(Exception):
    """Base class for package errors."""


class EvaluationError(SpocError):
    """A user evaluator returned a non-finite value or failed."""


class OrderDetectionError(SpocError):
    """Control dependence of a path constraint was not reached."""


class UnsupportedRegimeError(SpocError, ValueError):
    """Parameters outside the range where a benchmark's analytic form holds."""


class AssumptionViolatedError(SpocError):
    """A state constraint is already active at the initial time."""


class DetectionInconsistentError(SpocError):
    """Detected events do not alternate or their windows cannot be ordered."""


class AssemblyError(SpocError):
    """The NLP cannot be assembled from the given mesh."""


class MeshInvalidError(SpocError):
    """Mesh structure violates its invariants."""


class ProblemDefinitionError(SpocError, ValueError):
    """Malformed problem configuration."""
