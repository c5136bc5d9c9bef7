"""Clustering interval-censored time-series with delayed-entry alignment."""

__version__ = "0.1.0"
