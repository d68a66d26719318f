"""Covariant Feynman-Kac estimators on compact model geometries."""

__version__ = "0.1.0"
