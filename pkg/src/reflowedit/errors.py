"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line failure message.
"""


class ReflowError(ValueError):
    category = "error"


class DimensionMismatch(ReflowError):
    category = "dimension-mismatch"


class TimeSingularity(ReflowError):
    category = "time-singularity"


class SingularCovariance(ReflowError):
    category = "singular-covariance"


class InvalidCovariance(ReflowError):
    category = "invalid-covariance"


class UnsupportedEndpoints(ReflowError):
    category = "unsupported-endpoints"


class NonFiniteState(ReflowError):
    category = "non-finite-state"


class StepOutOfRange(ReflowError):
    category = "step-out-of-range"


class InvalidGrid(ReflowError):
    category = "invalid-grid"


class DegenerateFit(ReflowError):
    """Raised when every measured error is at round-off level (exact integration)."""

    category = "degenerate-fit"


class EmptyTargets(ReflowError):
    category = "empty-targets"


class NonPositiveLambda(ReflowError):
    category = "non-positive-lambda"


class InvalidParameter(ReflowError):
    category = "invalid-parameter"


class WindowOutOfRange(ReflowError):
    category = "window-out-of-range"


class EmptySelection(ReflowError):
    category = "empty-selection"


class InconsistentSessions(ReflowError):
    category = "inconsistent-sessions"


class ConfigError(ReflowError):
    category = "config"


class ShapeError(ReflowError):
    category = "shape"
