"""Numerical toolkit for weak Dirichlet processes, characteristics and martingale problems."""

__version__ = "0.1.0"
