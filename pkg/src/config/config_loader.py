"""Configuration loader for CP-Net runs."""

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from loguru import logger

from src.cloud.point_cloud import PointCloud
from src.cloud.shapes import make_shape_dataset
from src.losses.composition import LossConfig
from src.model.config import CpNetConfig, TaskVariant
from src.system.errors import CloudIOError, ConfigError, UsageError
from src.training.experiments import ExperimentSetup
from src.training.trainer import TrainConfig

# key -> (default, description)
DEFAULTS: Dict[str, Tuple[Any, str]] = {
    # run
    'seed': (0, "Single source of randomness; every stream is derived from it"),
    'task': ('segmentation', "classification or segmentation"),
    'out_dir': ('runs/default', "Directory for metrics, checkpoints and reports"),
    'debug': (False, "Check every tensor op for NaN/Inf"),
    'workers': (1, "Threads preparing perturbed batches"),
    # logging
    'log_level': ('INFO', "DEBUG, INFO, WARNING, ERROR"),
    'log_file': ('./logs/cpnet.log', "Rotating log file"),
    'log_rotation': ('10 MB', "Size at which the log file rotates"),
    'log_retention': (5, "Rotated log files kept"),
    # dataset
    'dataset_kinds': (['sphere', 'cube', 'torus'], "Shape kinds, one class each"),
    'dataset_count_per_kind': (10, "Clouds per kind"),
    'n_points': (256, "Points per cloud"),
    'noise_std': (0.0, "Gaussian coordinate noise of the synthetic shapes"),
    # schedule
    'epochs': (100, "Pre-training epochs"),
    'batch_size': (4, "Clouds per step"),
    'lr0': (0.001, "Initial learning rate"),
    'lr_decay': (0.7, "Learning-rate factor per period"),
    'lr_period': (20, "Epochs per learning-rate step"),
    'bn_momentum0': (0.9, "Initial batch-norm momentum (weight of the new batch)"),
    'bn_decay': (0.5, "Momentum factor per period"),
    'bn_period': (20, "Epochs per momentum step"),
    'bn_momentum_floor': (0.01, "Lowest batch-norm momentum"),
    'bn_recalibrate': (True, "Re-estimate batch-norm statistics on the clean clouds after the last epoch"),
    'adam_beta1': (0.9, "Adam first-moment decay"),
    'adam_beta2': (0.999, "Adam second-moment decay"),
    'adam_eps': (1e-8, "Adam denominator epsilon"),
    'checkpoint_every': (10, "Keep a numbered checkpoint every this many epochs (0: last only)"),
    # losses
    'loss_preset': ('', "Loss preset; empty selects the task preset"),
    'tau': (0.1, "Contrastive temperature"),
    'normalize_logits': (True, "l2-normalize features before contrastive dots"),
    'symmetric_cl': (False, "Average local consistency over both anchor directions"),
    # augmentation
    'manner': ('H', "Perturbation manner A-I"),
    'std': (0.02, "Jitter standard deviation"),
    'jitter_count': (-1, "Jitter only this many top-scored points (-1: use the manner)"),
    'noise_clip': (0.0, "Symmetric jitter clip (0: off)"),
    'k_graph': (16, "Neighbours of the scoring graph"),
    # model
    'channels_per_level': ([], "RS-Conv widths (empty: task default)"),
    'k_neighbors': (16, "Neighbours grouped per RS-Conv center"),
    'use_batch_norm': (True, "Batch norm in encoder and decoder"),
    'head_width': (32, "Width of every point-wise head"),
    'normal_head': (True, "Predict normals on the basic branch"),
    'relation_absolute': (True, "Keep absolute coordinates in relation vectors"),
    'fold_grid_side': (0, "Folding lattice side (0: ceil(sqrt(N)))"),
    # evaluation
    'probe_train_fraction': (0.0, "Labelled share for probes (0: 2/3 classify, 0.1 segment)"),
    'experiment': ('branch', "Experiment run by 'ablate'"),
    'experiment_seeds': ([0, 1, 2], "Seeds of every experiment variant"),
    'sweep_counts': ([], "Jitter counts of the count sweep (empty: 0, N/4, N/2, 3N/4, N)"),
    'sweep_stds': ([0.01, 0.02, 0.03], "Noise levels of the std sweep"),
    'density_fractions': ([1.0, 0.5, 0.25, 0.125], "Test densities of the robustness check"),
}

SEGMENTATION_KINDS = ['barbell', 'cylinder', 'cube']


def _coerce(key: str, value: Any, default: Any) -> Any:
    if value is None:
        return default
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered not in ('true', 'false', 'yes', 'no', '1', '0', 'on', 'off'):
                    raise ValueError(value)
                return lowered in ('true', 'yes', '1', 'on')
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [v.strip() for v in value.split(',') if v.strip()]
            if not isinstance(value, (list, tuple)):
                value = [value]
            kind = type(default[0]) if default else None
            return [kind(v) for v in value] if kind else list(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config key '{key}': cannot use {value!r} as {type(default).__name__}") from e


class ConfigLoader:
    """
    Flat run configuration over documented defaults.

    Every key has a default in ``DEFAULTS``; unknown keys are rejected and
    values are coerced to the default's type.
    """

    def __init__(self, config_path: Optional[Union[str, Path]] = "config.yaml", overrides: Optional[Dict[str, Any]] = None):
        """
        Initialize configuration loader.

        Args:
            config_path: Flat YAML file; None or a missing file gives the defaults
            overrides: Values applied on top of the file
        """
        self.config_path = Path(config_path) if config_path else None
        self.config = {key: default for key, (default, _) in DEFAULTS.items()}
        self._apply(self._load_file())
        self._apply(overrides or {})

    def _load_file(self) -> Dict[str, Any]:
        if self.config_path is None:
            return {}
        if not self.config_path.exists():
            logger.warning(f"Config file not found: {self.config_path}, using defaults")
            return {}
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                loaded = yaml.safe_load(f)
        except OSError as e:
            raise CloudIOError(f"cannot read config {self.config_path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed config {self.config_path}: {e}") from e
        if loaded is None:
            return {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {self.config_path} must be a flat key/value mapping")
        logger.info(f"Configuration loaded from {self.config_path}")
        return loaded

    def _apply(self, changes: Dict[str, Any]) -> None:
        unknown = sorted(set(changes) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in changes.items():
            if isinstance(value, dict):
                raise ConfigError(f"config key '{key}' must be a scalar or a list (the config is flat)")
            self.config[key] = _coerce(key, value, DEFAULTS[key][0])

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value.

        Args:
            key: Configuration key (e.g., 'batch_size')
            default: Value returned for keys that are not configured

        Returns:
            Configuration value
        """
        value = self.config.get(key)
        return value if value is not None else default

    def __getitem__(self, key: str) -> Any:
        if key not in self.config:
            raise ConfigError(f"unknown config key '{key}'")
        return self.config[key]

    def update(self, changes: Dict[str, Any]) -> None:
        self._apply({k: v for k, v in changes.items() if v is not None})

    def resolved(self) -> Dict[str, Any]:
        return dict(self.config)

    def dump(self) -> str:
        """The resolved configuration as documented flat YAML."""
        lines = ["# Resolved CP-Net configuration"]
        for key, (_, doc) in DEFAULTS.items():
            lines.append(f"# {doc}")
            value = yaml.safe_dump({key: self.config[key]}, default_flow_style=True, width=1000).strip()
            lines.append(value[1:-1] if value.startswith('{') else value)
        return "\n".join(lines) + "\n"

    def echo(self, out_dir: Optional[Union[str, Path]] = None) -> Path:
        """Write the resolved configuration next to the run outputs."""
        path = Path(out_dir or self.config['out_dir']) / 'config.resolved.yaml'
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.dump(), encoding='utf-8')
        except OSError as e:
            raise CloudIOError(f"cannot write {path}: {e}") from e
        return path

    # builders

    @property
    def task(self) -> TaskVariant:
        try:
            return TaskVariant(self.config['task'])
        except ValueError as e:
            raise ConfigError(f"task must be classification or segmentation, got '{self.config['task']}'") from e

    def model_config(self, n_points: Optional[int] = None) -> CpNetConfig:
        c = self.config
        overrides = dict(
            k_neighbors=c['k_neighbors'],
            use_batch_norm=c['use_batch_norm'],
            head_width=c['head_width'],
            normal_head=c['normal_head'],
            relation_absolute=c['relation_absolute'],
        )
        if c['channels_per_level']:
            overrides['channels_per_level'] = tuple(c['channels_per_level'])
        if c['fold_grid_side']:
            overrides['fold_grid_side'] = c['fold_grid_side']
        try:
            return CpNetConfig.for_task(self.task.value, n_points or c['n_points'], **overrides)
        except UsageError as e:
            raise ConfigError(str(e)) from e

    def loss_config(self) -> LossConfig:
        c = self.config
        preset = c['loss_preset'] or self.task.value
        try:
            return LossConfig.preset(
                preset, tau=c['tau'], batch_size=c['batch_size'],
                normalize_logits=c['normalize_logits'], symmetric_cl=c['symmetric_cl'],
            )
        except UsageError as e:
            raise ConfigError(str(e)) from e

    def train_config(self) -> TrainConfig:
        c = self.config
        keys = (
            'epochs', 'batch_size', 'lr0', 'lr_decay', 'lr_period', 'bn_momentum0', 'bn_decay', 'bn_period',
            'bn_momentum_floor', 'bn_recalibrate', 'adam_beta1', 'adam_beta2', 'adam_eps', 'seed', 'manner', 'std',
            'k_graph',
            'workers', 'checkpoint_every', 'debug',
        )
        return TrainConfig(
            model=self.model_config(),
            loss=self.loss_config(),
            jitter_count=c['jitter_count'] if c['jitter_count'] >= 0 else None,
            noise_clip=c['noise_clip'] if c['noise_clip'] > 0 else None,
            **{key: c[key] for key in keys},
        )

    def dataset_kinds(self) -> List[str]:
        kinds = self.config['dataset_kinds']
        if self.task == TaskVariant.SEGMENTATION and kinds == DEFAULTS['dataset_kinds'][0]:
            return list(SEGMENTATION_KINDS)
        return list(kinds)

    def dataset(self) -> Tuple[List[PointCloud], np.ndarray]:
        """The synthetic dataset described by the config."""
        c = self.config
        try:
            return make_shape_dataset(
                self.dataset_kinds(), c['dataset_count_per_kind'], c['n_points'], c['seed'], c['noise_std']
            )
        except UsageError as e:
            raise ConfigError(str(e)) from e

    def probe_fraction(self) -> float:
        fraction = self.config['probe_train_fraction']
        if fraction:
            return fraction
        return 2.0 / 3.0 if self.task == TaskVariant.CLASSIFICATION else 0.1

    def experiment_setup(self, out_dir: Optional[Union[str, Path]] = None) -> ExperimentSetup:
        """Dataset, base training configuration and seeds for ``run_experiment``."""
        clouds, labels = self.dataset()
        return ExperimentSetup(
            clouds=clouds,
            labels=labels,
            categories=[cloud.id.split('-')[0] for cloud in clouds],
            train=self.train_config(),
            probe_fraction=self.probe_fraction(),
            seeds=tuple(self.config['experiment_seeds']) or (self.config['seed'],),
            out_dir=Path(out_dir) if out_dir else None,
        )

    def experiment_kwargs(self) -> Dict[str, Any]:
        """Sweep values of the configured experiment."""
        name = self.config['experiment']
        if name == 'count':
            return {'counts': self.config['sweep_counts']}
        if name == 'std':
            return {'stds': self.config['sweep_stds']}
        if name == 'density':
            return {'fractions': self.config['density_fractions']}
        return {}
