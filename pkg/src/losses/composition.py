"""
Task-dependent composition of the loss terms.

Loss = consistency terms + reconstruction + normal estimation, all with
unit weight; which terms are active is decided by a ``LossConfig``.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.autodiff import ops
from src.autodiff.tensor import Tensor, constant
from src.cloud.point_cloud import PointCloud
from src.losses.consistency import DEFAULT_TAU, loss_cg, loss_cl, loss_cl2g
from src.losses.reconstruction import chamfer_tensor, loss_normal, loss_recon
from src.model.cpnet import BranchOutputs
from src.system.errors import InvalidSpecError, SizeMismatchError

TERMS = ('cg', 'cl', 'cl2g', 'recon', 'normal')
CONSISTENCY_TERMS = frozenset({'cg', 'cl', 'cl2g'})


class BranchSet(str, Enum):
    DUAL = "dual"
    BASIC = "basic"
    ASSISTANT = "assistant"


def _terms(*names: str) -> FrozenSet[str]:
    return frozenset(names)


# name -> (enabled terms, branches)
PRESETS: Dict[str, Tuple[FrozenSet[str], BranchSet]] = {
    'segmentation': (_terms('cl', 'recon', 'normal'), BranchSet.DUAL),
    'classification': (_terms('cg', 'cl', 'cl2g', 'recon'), BranchSet.DUAL),
    'classification_global': (_terms('cg', 'cl2g', 'recon'), BranchSet.DUAL),
    'basic_only': (_terms('recon', 'normal'), BranchSet.BASIC),
    'assistant_only': (_terms('recon', 'normal'), BranchSet.ASSISTANT),
    # loss ablation: normal / recon / dual (local consistency)
    'loss_a': (_terms('normal'), BranchSet.BASIC),
    'loss_b': (_terms('recon'), BranchSet.BASIC),
    'loss_c': (_terms('cl'), BranchSet.DUAL),
    'loss_d': (_terms('normal', 'recon'), BranchSet.BASIC),
    'loss_e': (_terms('normal', 'cl'), BranchSet.DUAL),
    'loss_f': (_terms('recon', 'cl'), BranchSet.DUAL),
    'loss_g': (_terms('normal', 'recon', 'cl'), BranchSet.DUAL),
    # consistency ablation for segmentation
    'seg_a': (_terms('cl', 'recon', 'normal'), BranchSet.DUAL),
    'seg_b': (_terms('cl', 'cg', 'recon', 'normal'), BranchSet.DUAL),
    'seg_c': (_terms('cl', 'cg', 'cl2g', 'recon', 'normal'), BranchSet.DUAL),
    # consistency ablation for classification
    'cls_A': (_terms('cg', 'recon'), BranchSet.DUAL),
    'cls_B': (_terms('cg', 'cl', 'recon'), BranchSet.DUAL),
    'cls_C': (_terms('cg', 'cl', 'cl2g', 'recon'), BranchSet.DUAL),
}

LOSS_ABLATION = ('loss_a', 'loss_b', 'loss_c', 'loss_d', 'loss_e', 'loss_f', 'loss_g')
SEGMENTATION_CONSISTENCY = ('seg_a', 'seg_b', 'seg_c')
CLASSIFICATION_CONSISTENCY = ('cls_A', 'cls_B', 'cls_C')


@dataclass(frozen=True)
class LossConfig:
    """
    Active loss terms and their hyper-parameters.

    Attributes:
        enabled: Subset of {cg, cl, cl2g, recon, normal}
        tau: Contrastive temperature
        batch_size: Samples whose globals form the CL2G candidates
        normalize_logits: l2-normalize features before contrastive dots
        symmetric_cl: Average CL over both anchor directions
        branches: Which branches run (consistency terms need both)
    """
    enabled: FrozenSet[str] = PRESETS['segmentation'][0]
    tau: float = DEFAULT_TAU
    batch_size: int = 1
    normalize_logits: bool = True
    symmetric_cl: bool = False
    branches: BranchSet = BranchSet.DUAL

    def __post_init__(self):
        object.__setattr__(self, 'enabled', frozenset(self.enabled))
        object.__setattr__(self, 'branches', BranchSet(self.branches))
        unknown = self.enabled - set(TERMS)
        if unknown:
            raise InvalidSpecError(f"unknown loss terms: {sorted(unknown)}")
        if not self.enabled:
            raise InvalidSpecError("at least one loss term must be enabled")
        if self.tau <= 0:
            raise InvalidSpecError(f"tau must be > 0, got {self.tau}")
        if self.batch_size < 1:
            raise InvalidSpecError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.enabled & CONSISTENCY_TERMS and self.branches != BranchSet.DUAL:
            raise InvalidSpecError("consistency terms need both branches")

    @classmethod
    def preset(cls, name: str, **overrides) -> 'LossConfig':
        if name not in PRESETS:
            raise InvalidSpecError(f"unknown loss preset '{name}' (known: {', '.join(sorted(PRESETS))})")
        enabled, branches = PRESETS[name]
        return cls(enabled=enabled, branches=branches, **overrides)

    def with_batch_size(self, batch_size: int) -> 'LossConfig':
        return replace(self, batch_size=batch_size)

    @property
    def needs_normals(self) -> bool:
        return 'normal' in self.enabled

    @property
    def is_dual(self) -> bool:
        return self.branches == BranchSet.DUAL


@dataclass
class LossBreakdown:
    """Every term of one sample (zero when disabled) and their sum."""
    cg: Tensor
    cl: Tensor
    cl2g: Tensor
    recon: Tensor
    normal: Tensor
    total: Tensor
    enabled: FrozenSet[str] = field(default_factory=frozenset)

    def as_row(self) -> Dict[str, float]:
        return {name: getattr(self, name).item() for name in TERMS + ('total',)}

    @staticmethod
    def mean_rows(rows: Sequence[Dict[str, float]]) -> Dict[str, float]:
        if not rows:
            return {name: 0.0 for name in TERMS + ('total',)}
        return {name: float(np.mean([r[name] for r in rows])) for name in TERMS + ('total',)}


def _zero() -> Tensor:
    return constant(0.0)


def total_loss(
    outputs: BranchOutputs,
    cloud: PointCloud,
    cfg: LossConfig,
    g_batch: Optional[Sequence[Tensor]] = None,
    g_prime_batch: Optional[Sequence[Tensor]] = None,
    own_index: int = 0,
    warn: bool = True
) -> LossBreakdown:
    """
    Loss of one sample.

    Args:
        outputs: Branch outputs of the sample
        cloud: The original cloud, reconstruction target and normal source
        cfg: Active terms
        g_batch: Basic-branch globals of the whole batch (CL2G); defaults to this sample only
        g_prime_batch: Assistant-branch globals of the whole batch
        own_index: Position of the sample in the batch
        warn: Allow the batch-of-one CL2G warning

    Returns:
        LossBreakdown whose total is the sum of the enabled terms
    """
    terms = {name: _zero() for name in TERMS}
    enabled = cfg.enabled

    if enabled & CONSISTENCY_TERMS and not outputs.is_dual:
        raise InvalidSpecError("consistency terms need dual-branch outputs")

    if 'cg' in enabled:
        terms['cg'] = loss_cg(outputs.G, outputs.G_prime)
    if 'cl' in enabled:
        basic_rows, assistant_rows = outputs.pairs
        if len(basic_rows):
            terms['cl'] = loss_cl(
                ops.gather_rows(outputs.Y, basic_rows), ops.gather_rows(outputs.Y_prime, assistant_rows),
                tau=cfg.tau, normalize=cfg.normalize_logits, symmetric=cfg.symmetric_cl,
            )
        else:
            logger.debug(f"No paired rows for cloud '{cloud.id}'; local consistency skipped")
    if 'cl2g' in enabled:
        terms['cl2g'] = loss_cl2g(
            outputs.Y, outputs.Y_prime,
            g_batch if g_batch is not None else [outputs.G],
            g_prime_batch if g_prime_batch is not None else [outputs.G_prime],
            own_index, tau=cfg.tau, normalize=cfg.normalize_logits, warn=warn,
        )
    if 'recon' in enabled:
        if outputs.is_dual:
            terms['recon'] = loss_recon(cloud.points, outputs.basic.reconstruction, outputs.assistant.reconstruction)
        else:
            branch = outputs.basic or outputs.assistant
            terms['recon'] = chamfer_tensor(cloud.points, branch.reconstruction)
    if 'normal' in enabled:
        branch = outputs.basic or outputs.assistant
        if cloud.normals is None:
            raise InvalidSpecError(f"normal loss enabled but cloud '{cloud.id}' has no normals")
        if branch.normals is None:
            raise InvalidSpecError("normal loss enabled but the model has no normal head")
        terms['normal'] = loss_normal(branch.normals, cloud.normals[branch.source_rows])

    total = _zero()
    for name in TERMS:
        if name in enabled:
            total = ops.add(total, terms[name])
    return LossBreakdown(total=total, enabled=enabled, **terms)


def batch_loss(
    outputs: Sequence[BranchOutputs],
    clouds: Sequence[PointCloud],
    cfg: LossConfig,
    warn: bool = True
) -> Tuple[Tensor, List[LossBreakdown]]:
    """
    Sum of the per-sample losses of a batch; CL2G draws its candidates from
    the globals of every sample in the batch.
    """
    if len(outputs) != len(clouds) or not outputs:
        raise SizeMismatchError(f"{len(outputs)} outputs for {len(clouds)} clouds")
    g_batch = g_prime_batch = None
    if 'cl2g' in cfg.enabled:
        g_batch = [o.G for o in outputs]
        g_prime_batch = [o.G_prime for o in outputs]

    breakdowns = []
    total = _zero()
    for index, (out, cloud) in enumerate(zip(outputs, clouds)):
        breakdown = total_loss(out, cloud, cfg, g_batch, g_prime_batch, own_index=index, warn=warn and index == 0)
        breakdowns.append(breakdown)
        total = ops.add(total, breakdown.total)
    return total, breakdowns


def enabled_terms(names: Iterable[str]) -> FrozenSet[str]:
    """Parse term names, accepting upper-case spellings."""
    return frozenset(name.strip().lower() for name in names if name.strip())
