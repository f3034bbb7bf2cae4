"""cyclesem - Unsupervised anomaly segmentation through an image -> semantic -> image cycle."""

__version__ = "0.1.0"
