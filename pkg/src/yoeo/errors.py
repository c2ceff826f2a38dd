class YoeoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(YoeoError, ValueError):
    """Invalid shapes, dimensions or hyperparameters."""


class UsageError(YoeoError, ValueError):
    """An operation was called out of order or with unusable inputs."""


class TrainingError(YoeoError, RuntimeError):
    """Non-finite losses, gradients or values during training."""


class LoadError(YoeoError, ValueError):
    """A file on disk is malformed or violates dataset invariants."""
