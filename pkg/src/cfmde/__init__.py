"""Characteristic-function minimum distance estimation for multiscale diffusions."""

__version__ = "0.1.0"
