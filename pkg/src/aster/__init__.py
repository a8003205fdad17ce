"""Unsupervised time-series anomaly detection with latent pseudo-anomaly generation."""

__version__ = "0.1.0"
