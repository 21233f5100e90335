"""Limiting spectral laws, CLT parameters and Monte-Carlo checks for
linear spectral statistics of sample covariance matrices."""

__version__ = "0.1.0"
