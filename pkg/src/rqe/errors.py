"""Exception types raised across the package."""


class RQEError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RQEError, ValueError):
    """Malformed numeric input (wrong shape, non-finite values, off-simplex)."""


class ConfigurationError(RQEError, ValueError):
    """Parameters that cannot define a valid problem."""


class DomainError(RQEError, ValueError):
    """A regularizer was evaluated outside the interior of the simplex."""


class UnsupportedOracleError(RQEError, NotImplementedError):
    """The brute-force oracle was asked for a game it does not handle."""


class ConvergenceError(RQEError, RuntimeError):
    """An iterative routine hit its iteration cap.

    The last residual is kept on the exception so callers can log it.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual
