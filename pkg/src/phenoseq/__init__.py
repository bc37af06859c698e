"""Multilabel classification of irregularly sampled clinical time series with LSTMs."""

__version__ = "0.1.0"
