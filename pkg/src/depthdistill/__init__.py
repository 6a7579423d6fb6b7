"""Depth-to-RGB knowledge distillation for monocular 3-D detection, at desk scale."""

__version__ = "0.1.0"
