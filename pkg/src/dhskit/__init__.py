"""Depth-sensor pseudo-images (DHS), augmentation geometry, detection AP and backbone analysis."""

__version__ = "0.1.0"
