"""Iris recognition pipeline: segmentation, singular-value features, backprop classifier."""

__version__ = "0.1.0"
