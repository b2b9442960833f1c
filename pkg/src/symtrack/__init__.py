"""Time-symmetric multi-object tracking and segmentation on synthetic and MOTS data."""

__version__ = "0.1.0"
