"""Causal optimal transport training for sequential generative models."""

__version__ = "0.1.0"
