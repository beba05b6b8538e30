"""Consistency, reconstruction and normal losses and their presets."""

from .consistency import loss_cg, loss_cl, loss_cl2g, DEFAULT_TAU
from .reconstruction import chamfer_tensor, loss_recon, loss_normal
from .composition import (
    TERMS, PRESETS, LOSS_ABLATION, SEGMENTATION_CONSISTENCY, CLASSIFICATION_CONSISTENCY,
    BranchSet, LossConfig, LossBreakdown, total_loss, batch_loss, enabled_terms,
)

__all__ = [
    'loss_cg', 'loss_cl', 'loss_cl2g', 'DEFAULT_TAU',
    'chamfer_tensor', 'loss_recon', 'loss_normal',
    'TERMS', 'PRESETS', 'LOSS_ABLATION', 'SEGMENTATION_CONSISTENCY', 'CLASSIFICATION_CONSISTENCY',
    'BranchSet', 'LossConfig', 'LossBreakdown', 'total_loss', 'batch_loss', 'enabled_terms',
]
