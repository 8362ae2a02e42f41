"""Exception hierarchy shared across the package."""


class LsiLabError(Exception):
    """Base class for all package errors."""


class GeometryError(LsiLabError):
    pass


class UnsupportedDimensionError(GeometryError):
    pass


class DegenerateGeometryError(GeometryError):
    """Non-immersion point, degenerate face, or rank-deficient local fit."""


class HypothesisError(LsiLabError):
    """A precondition of the inequality is violated by the input."""


class MeanCurvatureError(HypothesisError):
    pass


class DisconnectedError(HypothesisError):
    pass


class NonPositiveDensityError(HypothesisError):
    pass


class NotOnUnitSphereError(HypothesisError):
    pass


class SolverError(LsiLabError):
    pass


class IncompatibleRHSError(SolverError):
    pass


class HessianUnavailableError(LsiLabError):
    pass


class FDStepError(LsiLabError):
    pass


class ConfigError(LsiLabError):
    pass


class ExpressionError(ConfigError):
    pass


class PipelineError(LsiLabError):
    """Wraps a module error with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
