class ConfigurationError(ValueError):
    """Invalid shapes, hyperparameters or run configuration."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or otherwise could not continue."""


class ProtocolError(ValueError):
    """A wire frame or file could not be decoded."""
