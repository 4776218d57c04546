"""Weakly-supervised crack segmentation from classifier attributions."""

__version__ = "0.1.0"
