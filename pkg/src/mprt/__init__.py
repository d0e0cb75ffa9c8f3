"""Permutation-based rank test for cross-covariance matrices of mixed data."""

__version__ = "0.1.0"
