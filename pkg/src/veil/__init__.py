"""Supervised multi-level autoencoders that export only compressed latents."""

from veil.errors import ConfigurationError, ProtocolError, TrainingError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "ProtocolError", "TrainingError", "__version__"]
