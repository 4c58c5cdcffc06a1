"""Fourier mean-function estimation for noisily, discretely observed random functions."""

__version__ = "0.1.0"
