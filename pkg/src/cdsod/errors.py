"""Exception hierarchy shared by the library and the CLI exit codes."""


class CdsError(Exception):
    """Base class for all errors raised by cdsod."""

    exit_code = 1


class ConfigError(CdsError, ValueError):
    """Invalid parameters or configuration."""

    exit_code = 2


class DataError(CdsError, ValueError):
    """Input data cannot be used (unreadable, malformed, degenerate)."""

    exit_code = 3


class EmptyPoolError(DataError):
    """The consistent pool is empty, so no one-class model can be trained."""


class SingularCovarianceError(DataError):
    """Covariance is not positive definite even after regularization."""


class ConvergenceError(CdsError, RuntimeError):
    """An iterative solver hit its iteration budget before converging."""

    exit_code = 4
