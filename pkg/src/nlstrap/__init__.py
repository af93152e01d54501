"""Numerical laboratory for small solutions of the 1D cubic-type NLS with a trapping potential."""

__version__ = "0.1.0"
