"""Billiard OTOC toolkit: geometry, classical dynamics, FEM spectra, and
out-of-time-ordered correlators for two-dimensional hard-wall billiards."""

__version__ = "0.1.0"
