"""Multi-resolution U-Nets, Haar subspaces and their analysis tools."""

__version__ = "0.1.0"
