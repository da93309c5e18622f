"""Multi-level integrate-and-fire spiking network engine."""

from .errors import ConfigError, DataError, InternalError, NumericalError, SNNError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "InternalError", "NumericalError", "SNNError", "__version__"]
