"""
Self-supervised pre-training loop.

Every random draw is derived from the run seed through named streams:
``shuffle`` per epoch, ``noise`` per (epoch, cloud) and ``init`` per
parameter. Resuming from a checkpoint therefore only needs the seed and the
number of completed epochs.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from src.autodiff.optim import AdamHyper, adam_step
from src.autodiff.params import ParamStore
from src.autodiff.tensor import Tape, backward, set_debug
from src.cloud.point_cloud import PointCloud
from src.cloud.preprocess import resample, with_estimated_normals
from src.disentangle.decomposition import DisentangledCloud, disentangle
from src.disentangle.perturbation import PerturbedCloud, jitter_count_variant, pad_to, perturb
from src.losses.composition import BranchSet, LossBreakdown, LossConfig, batch_loss
from src.model.config import CpNetConfig
from src.model.cpnet import BranchOutputs, CpNet, dual_forward, init_params, single_forward
from src.model.layers import ForwardMode
from src.system.errors import ConfigError, NonFiniteLossError
from src.training.checkpoint import Checkpoint, config_fingerprint, load_checkpoint, save_checkpoint
from src.training.metrics import MetricsWriter
from src.training.schedules import bn_momentum_at, lr_at
from src.utils.seeding import derive_seed, substream


@dataclass(frozen=True)
class TrainConfig:
    """
    Pre-training settings.

    ``jitter_count`` switches from the manner-based perturbation to jittering
    the ``jitter_count`` highest-scoring points.

    With ``bn_recalibrate`` the last epoch ends with a pass over the clean
    clouds that replaces the running batch-norm statistics by their dataset
    average; training-mode batch norm never reads them, so losses and
    parameters are unaffected.
    """
    model: CpNetConfig
    loss: LossConfig
    epochs: int = 100
    batch_size: int = 4
    lr0: float = 0.001
    lr_decay: float = 0.7
    lr_period: int = 20
    bn_momentum0: float = 0.9
    bn_decay: float = 0.5
    bn_period: int = 20
    bn_momentum_floor: float = 0.01
    bn_recalibrate: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    manner: str = "H"
    std: float = 0.02
    jitter_count: Optional[int] = None
    noise_clip: Optional[float] = None
    k_graph: int = 16
    workers: int = 1
    checkpoint_every: int = 0
    debug: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_period < 1 or self.bn_period < 1:
            raise ConfigError("schedule periods must be >= 1")
        if self.loss.needs_normals and not self.model.normal_head:
            raise ConfigError("normal loss enabled but the model has no normal head")

    @property
    def adam(self) -> AdamHyper:
        return AdamHyper(lr=self.lr0, beta1=self.adam_beta1, beta2=self.adam_beta2, eps=self.adam_eps)

    def fingerprint(self) -> str:
        """Identity of the run, ignoring the epoch budget and I/O knobs."""
        payload = asdict(self)
        for key in ('epochs', 'workers', 'checkpoint_every', 'debug'):
            payload.pop(key)
        # set order is not stable across processes
        payload['loss']['enabled'] = sorted(payload['loss']['enabled'])
        return config_fingerprint(payload)


@dataclass
class TrainingHistory:
    steps: List[Dict[str, Any]] = field(default_factory=list)
    epochs: List[Dict[str, Any]] = field(default_factory=list)

    def epoch_totals(self) -> List[float]:
        return [row['total'] for row in self.epochs]


def prepare_dataset(clouds: Sequence[PointCloud], n_points: int, need_normals: bool, seed: int) -> List[PointCloud]:
    """Bring every cloud to n_points and fill in missing normals when they are needed."""
    prepared = []
    resized = 0
    for index, cloud in enumerate(clouds):
        if len(cloud) != n_points:
            cloud = resample(cloud, n_points, derive_seed(seed, 'data', 'resample', index))
            resized += 1
        if need_normals and not cloud.has_normals:
            cloud = with_estimated_normals(cloud)
        prepared.append(cloud)
    if resized:
        logger.warning(f"Resampled {resized} of {len(clouds)} clouds to N={n_points}")
    return prepared


class Trainer:
    """Runs the dual-branch pre-training of one configuration."""

    def __init__(
        self,
        dataset: Sequence[PointCloud],
        cfg: TrainConfig,
        out_dir: Optional[Union[str, Path]] = None,
        store: Optional[ParamStore] = None
    ):
        if not dataset:
            raise ConfigError("pre-training needs at least one cloud")
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.dataset = prepare_dataset(dataset, cfg.model.n_points, cfg.loss.needs_normals, cfg.seed)
        self.loss_cfg = cfg.loss.with_batch_size(cfg.batch_size)
        self.store = store if store is not None else init_params(cfg.model, seed=cfg.seed)
        self.model = CpNet(cfg.model, self.store, seed=cfg.seed)
        self.metrics = MetricsWriter(self.out_dir)
        self.history = TrainingHistory()
        self.start_epoch = 0
        self._disentangled: Dict[int, DisentangledCloud] = {}
        self._warned_single_batch = False
        set_debug(cfg.debug)

        if 'cl2g' in self.loss_cfg.enabled and cfg.batch_size == 1:
            self._warn_single_batch()

    def _warn_single_batch(self) -> None:
        if not self._warned_single_batch:
            logger.warning("Local-to-global consistency with a batch of one contributes 0")
            self._warned_single_batch = True

    # batch preparation

    def _decomposition(self, index: int) -> DisentangledCloud:
        if index not in self._disentangled:
            self._disentangled[index] = disentangle(self.dataset[index], self.cfg.k_graph)
        return self._disentangled[index]

    def _perturbed(self, epoch: int, index: int) -> PerturbedCloud:
        cfg = self.cfg
        d = self._decomposition(index)
        seed = derive_seed(cfg.seed, 'noise', epoch, index)
        if cfg.jitter_count is not None:
            result = jitter_count_variant(d, cfg.jitter_count, cfg.std, seed, cfg.noise_clip)
        else:
            result = perturb(d, cfg.manner, cfg.std, seed, cfg.noise_clip)
        return pad_to(result, len(self.dataset[index]))

    def _prepare_batch(self, epoch: int, indices: Sequence[int]) -> List[Optional[PerturbedCloud]]:
        if self.loss_cfg.branches == BranchSet.BASIC:
            return [None] * len(indices)
        if self.cfg.workers > 1 and len(indices) > 1:
            # fill the decomposition cache serially, then perturb in parallel
            for index in indices:
                self._decomposition(index)
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(lambda i: self._perturbed(epoch, i), indices))
        return [self._perturbed(epoch, index) for index in indices]

    # forward

    def forward(self, cloud: PointCloud, perturbed: Optional[PerturbedCloud], mode: ForwardMode) -> BranchOutputs:
        branches = self.loss_cfg.branches
        normals = self.loss_cfg.needs_normals
        if branches == BranchSet.DUAL:
            return dual_forward(self.model, cloud, perturbed, mode)
        if branches == BranchSet.BASIC:
            return BranchOutputs(basic=single_forward(self.model, cloud.points, mode, with_normals=normals), assistant=None)
        assistant = single_forward(
            self.model, perturbed.points, mode, source_idx=perturbed.source_idx, with_normals=normals
        )
        return BranchOutputs(basic=None, assistant=assistant)

    # loop

    def resume(self, path: Union[str, Path]) -> None:
        ckpt = load_checkpoint(path)
        if ckpt.fingerprint != self.cfg.fingerprint():
            raise ConfigError(f"checkpoint {path} was written by a different configuration")
        self.store = ckpt.store
        self.model = CpNet(self.cfg.model, self.store, seed=self.cfg.seed)
        self.start_epoch = ckpt.epoch
        self.history.epochs = list(ckpt.history)
        self.metrics.restore(ckpt.history, ckpt.epoch)
        if self.metrics.steps_path is not None and self.metrics.steps_path.exists():
            self.history.steps = [
                json.loads(line) for line in self.metrics.steps_path.read_text(encoding='utf-8').splitlines() if line
            ]
        logger.info(f"Resuming from {path} after epoch {ckpt.epoch}")

    def train_step(self, epoch: int, step: int, indices: Sequence[int]) -> Dict[str, Any]:
        cfg = self.cfg
        clouds = [self.dataset[i] for i in indices]
        perturbed = self._prepare_batch(epoch, indices)
        mode = ForwardMode(training=True, bn_momentum=bn_momentum_at(epoch, cfg))
        if 'cl2g' in self.loss_cfg.enabled and len(indices) == 1:
            self._warn_single_batch()

        with Tape() as tape:
            outputs = [self.forward(c, p, mode) for c, p in zip(clouds, perturbed)]
            total, breakdowns = batch_loss(outputs, clouds, self.loss_cfg, warn=False)

        row = LossBreakdown.mean_rows([b.as_row() for b in breakdowns])
        if not np.isfinite(total.item()):
            raise NonFiniteLossError(epoch, step, row)

        lr = lr_at(epoch, cfg)
        grads = backward(tape, total, self.store)
        adam_step(self.store, grads, cfg.adam, lr=lr)
        return {'epoch': epoch, 'step': step, 'lr': lr, **row}

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        cfg = self.cfg
        order = substream(cfg.seed, 'shuffle', epoch).permutation(len(self.dataset))
        rows = []
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            row = self.train_step(epoch, step, order[start:start + cfg.batch_size].tolist())
            self.metrics.write_step(row)
            self.history.steps.append(row)
            rows.append(row)
        summary = {
            'epoch': epoch,
            'lr': lr_at(epoch, cfg),
            'bn_momentum': bn_momentum_at(epoch, cfg),
            'steps': len(rows),
            **LossBreakdown.mean_rows(rows),
        }
        self.metrics.write_epoch(summary)
        self.history.epochs.append(summary)
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: total {summary['total']:.6f} (lr {summary['lr']:.6g})")
        return summary

    def recalibrate_batch_norm(self) -> None:
        """Running statistics become the average of the per-cloud statistics of the clean dataset."""
        for count, cloud in enumerate(self.dataset, start=1):
            # weight 1/count keeps a running mean; the first cloud overwrites the old values
            mode = ForwardMode(training=True, bn_momentum=1.0 / count)
            single_forward(self.model, cloud.points, mode, with_normals=False)
        logger.info(f"Re-estimated batch-norm statistics on {len(self.dataset)} clean clouds")

    def checkpoint(self, epochs_done: int) -> Optional[Path]:
        if self.out_dir is None:
            return None
        ckpt = Checkpoint(
            store=self.store, epoch=epochs_done, fingerprint=self.cfg.fingerprint(),
            seed=self.cfg.seed, history=self.history.epochs,
        )
        if self.cfg.checkpoint_every and epochs_done % self.cfg.checkpoint_every == 0:
            save_checkpoint(ckpt, self.out_dir / 'checkpoints' / f"epoch_{epochs_done:04d}.ckpt")
        return save_checkpoint(ckpt, self.out_dir / 'checkpoints' / 'last.ckpt')

    def run(self) -> Tuple[ParamStore, TrainingHistory]:
        cfg = self.cfg
        if self.start_epoch == 0:
            self.metrics.reset()
        logger.info(
            f"Pre-training on {len(self.dataset)} clouds: {cfg.epochs} epochs, batch {cfg.batch_size}, "
            f"terms {sorted(self.loss_cfg.enabled)}, branches {self.loss_cfg.branches.value}"
        )
        for epoch in range(self.start_epoch, cfg.epochs):
            self.train_epoch(epoch)
            if cfg.bn_recalibrate and epoch + 1 == cfg.epochs:
                self.recalibrate_batch_norm()
            self.checkpoint(epoch + 1)
        return self.store, self.history


def pretrain(
    dataset: Sequence[PointCloud],
    cfg: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
    resume_from: Optional[Union[str, Path]] = None
) -> Tuple[ParamStore, TrainingHistory]:
    """
    Pre-train CP-Net on unlabelled clouds.

    Args:
        dataset: Clouds; resampled to the model's N when they differ
        cfg: Training configuration
        out_dir: Where metrics and checkpoints go; nothing is written when None
        resume_from: Checkpoint to continue from

    Returns:
        (trained parameters, metrics history)
    """
    trainer = Trainer(dataset, cfg, out_dir)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.run()
