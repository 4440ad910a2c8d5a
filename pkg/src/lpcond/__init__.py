"""Boundary-adaptive local polynomial conditional density estimation."""

__version__ = "0.1.0"
