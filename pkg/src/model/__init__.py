"""CP-Net backbone, heads and dual-branch forward pass."""

from .config import CpNetConfig, FoldingGrid, TaskVariant
from .layers import ForwardMode, INFERENCE, Linear, BatchNorm, SharedMLP
from .cpnet import (
    CpNet, SamplingPlan, EncoderOutput, BranchResult, BranchOutputs,
    build_plan, rsconv_level, transition_up, pointwise_head, global_feature,
    predict_normals, fold_reconstruct, single_forward, dual_forward, init_params, pair_rows, check_store,
)

__all__ = [
    'CpNetConfig', 'FoldingGrid', 'TaskVariant',
    'ForwardMode', 'INFERENCE', 'Linear', 'BatchNorm', 'SharedMLP',
    'CpNet', 'SamplingPlan', 'EncoderOutput', 'BranchResult', 'BranchOutputs',
    'build_plan', 'rsconv_level', 'transition_up', 'pointwise_head', 'global_feature',
    'predict_normals', 'fold_reconstruct', 'single_forward', 'dual_forward', 'init_params', 'pair_rows', 'check_store',
]
