"""Numerical verification lab for the sharp log-Sobolev inequality on submanifolds with |H| = 1."""

__version__ = "0.1.0"
