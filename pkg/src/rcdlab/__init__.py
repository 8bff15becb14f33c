"""Numerical laboratory for heat semigroups, Gamma calculus and Harnack-type inequalities."""

__version__ = "0.1.0"
