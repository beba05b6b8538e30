"""CP-Net: contour-perturbed self-supervised pre-training for point clouds."""

__version__ = "0.1.0"
