"""Exception types raised across the package."""


class GLAError(Exception):
    """Base class for all package errors."""


class ShapeError(GLAError, ValueError):
    """Array dimensions do not match the architecture."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class NonFiniteLossError(GLAError, FloatingPointError):
    """The loss evaluated to NaN or infinity."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class TrainingDivergedError(GLAError, FloatingPointError):
    """Optimisation produced a non-finite loss."""

    def __init__(self, message, last_finite_epoch):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


class NotPositiveDefiniteError(GLAError, ValueError):
    """A precision matrix could not be factorised."""

    def __init__(self, message, min_eigenvalue=None, layer=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.layer = layer


class DatasetError(GLAError, ValueError):
    """Malformed or inconsistent data."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ConfigError(GLAError, ValueError):
    """Invalid experiment or training configuration."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
