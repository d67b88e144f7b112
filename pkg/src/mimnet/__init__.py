"""Residual-network surrogate for complex S11 spectra of MIM metasurfaces."""

__version__ = "0.1.0"
