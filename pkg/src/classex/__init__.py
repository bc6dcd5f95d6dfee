"""Estimate and extrapolate the expected accuracy of marginal multi-class classifiers."""

__version__ = "0.1.0"
