"""Exception types shared across the package."""


class TVBilevelError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(TVBilevelError, ValueError):
    """Operands live on incompatible grids or have the wrong length."""


class MalformedFileError(TVBilevelError, ValueError):
    """A data file has a bad magic number, version, or truncated payload."""


class SingularSystemError(TVBilevelError, RuntimeError):
    """A linearized system is singular (ill-posed weight/boundary combination)."""


class DivergenceError(TVBilevelError, RuntimeError):
    """An iteration produced non-finite values."""


class NotDescentDirectionError(TVBilevelError, ValueError):
    """The search direction does not satisfy grad . d < 0."""


class LineSearchError(TVBilevelError, RuntimeError):
    """Backtracking exhausted its evaluation budget without an acceptable step."""

    def __init__(self, message: str, evaluations: int = 0):
        super().__init__(message)
        self.evaluations = evaluations
