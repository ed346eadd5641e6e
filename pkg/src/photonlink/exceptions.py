"""Exception types shared across the package."""


class PhotonLinkError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(PhotonLinkError, ValueError):
    pass


class InvalidStateError(PhotonLinkError, ValueError):
    """A matrix failed the density-matrix checks (Hermitian, unit trace, PSD)."""


class IntegrationError(PhotonLinkError, RuntimeError):
    """Adaptive integration gave up; ``last_time`` is the last accepted time."""

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class ParameterError(PhotonLinkError, ValueError):
    pass


class FitError(PhotonLinkError, RuntimeError):
    """A fit did not converge. ``best`` holds the best point found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConditioningError(PhotonLinkError, ValueError):
    pass


class ReconstructionError(PhotonLinkError, RuntimeError):
    pass


class ConfigError(PhotonLinkError, ValueError):
    """Invalid scenario configuration. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OptimizationError(PhotonLinkError, RuntimeError):
    pass
