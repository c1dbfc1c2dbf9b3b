"""Meta-learned, self-supervised 3D part segmentation on synthetic shapes."""

__version__ = "0.1.0"
