"""Numerical laboratory for ground states of a two-component NLS system with SU(2) symmetry."""

__version__ = "0.1.0"
