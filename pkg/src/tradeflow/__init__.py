"""Trade co-occurrence flow decomposition and conditional order imbalances."""

__version__ = "0.1.0"
