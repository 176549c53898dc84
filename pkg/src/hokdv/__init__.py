"""Spectral control toolkit for higher-order KdV equations on the circle."""

__version__ = "0.1.0"
