"""Contour/content decomposition and contour-perturbed augmentation."""

from .decomposition import DisentangledCloud, disentangle, score_order
from .perturbation import (
    PerturbationManner, PerturbedCloud, perturb, jitter_count_variant, pad_to
)

__all__ = [
    'DisentangledCloud', 'disentangle', 'score_order',
    'PerturbationManner', 'PerturbedCloud', 'perturb', 'jitter_count_variant', 'pad_to',
]
