"""Multivariate time-series forecasting with pyramidal RNN variate embeddings."""

__version__ = "0.1.0"
