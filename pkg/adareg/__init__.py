"""Adaptive L2 regularization with trainable per-parameter factors, on a desk-scale re-ID pipeline."""

__version__ = '1.0.0'
