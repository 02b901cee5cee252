"""Bayesian modal regression for combining expert forecasts."""

__version__ = "0.1.0"
