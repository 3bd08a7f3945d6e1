"""Remote-sensing instruction-corpus compiler, evaluation metrics and kernel checks."""

__version__ = "0.1.0"
