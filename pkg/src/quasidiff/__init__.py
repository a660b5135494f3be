"""Quasi-derivative regularization of singular ordinary differential operators."""

__version__ = "0.1.0"
