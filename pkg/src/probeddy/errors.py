"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A model parameter or input violates a documented precondition."""


class AliasingError(ValueError):
    """A grid is too coarse to represent the retained Fourier modes."""


class ConfigurationError(ValueError):
    """An experiment or assimilation configuration is inconsistent."""


class NumericalInstabilityError(RuntimeError):
    """A covariance left the positive semidefinite cone beyond tolerance."""

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (t={time:g} days)")
        self.time = time


class MissingStageError(RuntimeError):
    """A pipeline stage needs an intermediate product that does not exist."""

    def __init__(self, stage, path):
        super().__init__(f"missing {path}; rerun stage '{stage}' first")
        self.stage = stage
        self.path = path
