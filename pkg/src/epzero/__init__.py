"""Pseudo-spectral laboratory for the scaled Euler-Poisson plasma system."""

__version__ = "0.1.0"
