"""Exception hierarchy shared by the library, the CLI and the service."""

from typing import Any, Optional


class SonarScaleError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(SonarScaleError, ValueError):
    """An input lies outside the domain of an operation.

    ``index`` names the offending element when there is one: an entry
    index, a point index or a ``(p, q)`` pair.
    """

    def __init__(self, message: str, index: Optional[Any] = None):
        if index is not None:
            message = f"{message} (at index {index})"
        super().__init__(message)
        self.index = index


class DimensionMismatchError(InvalidInputError):
    """Array shapes or dimensions do not agree."""


class NonConvergenceError(SonarScaleError, RuntimeError):
    """An iterative optimisation failed to make progress."""

    def __init__(self, message: str, stress: Optional[float] = None):
        if stress is not None:
            message = f"{message} (stress={stress!r})"
        super().__init__(message)
        self.stress = stress


class IcaConvergenceError(NonConvergenceError):
    """FastICA did not reach its tolerance within the iteration budget."""

    def __init__(self, n_iter: int, delta: float):
        super().__init__(f"FastICA did not converge after {n_iter} iterations (last delta={delta!r})")
        self.n_iter = n_iter
        self.delta = delta


class ConfigError(SonarScaleError, ValueError):
    """A configuration file or override is invalid."""


class ArtifactError(SonarScaleError):
    """A staged artifact is missing, stale or inconsistent."""


class StageError(SonarScaleError):
    """Wraps a failure inside a pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
