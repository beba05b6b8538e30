"""
Desk-scale ablation runners.

Each runner pre-trains one configuration per variant and seed, probes the
frozen features and returns one row per run; ``write`` stores the rows as
CSV for plotting.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from src.autodiff.params import ParamStore
from src.cloud.point_cloud import PointCloud
from src.cloud.preprocess import resample
from src.disentangle.perturbation import PerturbationManner
from src.losses.composition import (
    CLASSIFICATION_CONSISTENCY, LOSS_ABLATION, SEGMENTATION_CONSISTENCY, LossConfig
)
from src.model.config import TaskVariant
from src.model.cpnet import init_params
from src.system.errors import InvalidSpecError
from src.training.metrics import write_csv
from src.training.probes import (
    ProbeReport, extract_features, fit_and_score, linear_probe_classify, linear_probe_segment, stratified_split
)
from src.training.trainer import TrainConfig, pretrain
from src.utils.seeding import derive_seed

Variant = Tuple[str, Callable[[TrainConfig], TrainConfig]]

DEFAULT_STDS = (0.01, 0.02, 0.03)
DEFAULT_FRACTIONS = (1.0, 0.5, 0.25, 0.125)


@dataclass
class ExperimentSetup:
    """
    Dataset and base configuration shared by every run of an experiment.

    Attributes:
        clouds: Pre-training clouds, also probed
        labels: Class label of every cloud
        categories: Category name of every cloud (segmentation probe)
        train: Base training configuration
        probe_fraction: Labelled share of the probe split
        seeds: Seeds to repeat every variant with
        out_dir: Root for per-run outputs; nothing is written when None
    """
    clouds: List[PointCloud]
    labels: np.ndarray
    categories: List[str]
    train: TrainConfig
    probe_fraction: float
    seeds: Sequence[int] = (0, 1, 2)
    out_dir: Optional[Path] = None

    @property
    def task(self) -> TaskVariant:
        return self.train.model.task_variant


def evaluate(store: ParamStore, setup: ExperimentSetup, seed: int) -> ProbeReport:
    """Probe frozen features with the task's protocol."""
    cfg = setup.train.model
    if setup.task == TaskVariant.SEGMENTATION:
        features = extract_features(store, setup.clouds, cfg, 'segment')
        parts = [c.part_labels for c in setup.clouds]
        return linear_probe_segment(features, parts, setup.categories, setup.probe_fraction, seed)
    features = extract_features(store, setup.clouds, cfg, 'classify')
    return linear_probe_classify(features, setup.labels, setup.probe_fraction, seed)


def run_variants(setup: ExperimentSetup, experiment: str, variants: Sequence[Variant]) -> List[Dict]:
    rows = []
    for label, transform in variants:
        for seed in setup.seeds:
            cfg = transform(replace(setup.train, seed=seed))
            run_dir = setup.out_dir / experiment / f"{label}_seed{seed}" if setup.out_dir else None
            logger.info(f"[{experiment}] variant {label}, seed {seed}")
            store, history = pretrain(setup.clouds, cfg, run_dir)
            report = evaluate(store, setup, seed)
            totals = history.epoch_totals()
            rows.append({
                'experiment': experiment,
                'variant': label,
                'seed': seed,
                'metric': report.metric,
                'final_loss': totals[-1] if totals else float('nan'),
            })
    return rows


def summarize(rows: Sequence[Dict]) -> Dict[str, float]:
    """Median metric per variant."""
    by_variant: Dict[str, List[float]] = {}
    for row in rows:
        by_variant.setdefault(row['variant'], []).append(row['metric'])
    return {variant: float(np.median(values)) for variant, values in by_variant.items()}


def _task_preset(setup: ExperimentSetup) -> str:
    return setup.task.value


def _with_loss(preset: str) -> Callable[[TrainConfig], TrainConfig]:
    def apply(cfg: TrainConfig) -> TrainConfig:
        loss = LossConfig.preset(
            preset, tau=cfg.loss.tau, normalize_logits=cfg.loss.normalize_logits, symmetric_cl=cfg.loss.symmetric_cl
        )
        return replace(cfg, loss=loss)
    return apply


def branch_ablation(setup: ExperimentSetup) -> List[Dict]:
    variants = [
        ('dual', _with_loss(_task_preset(setup))),
        ('basic_only', _with_loss('basic_only')),
        ('assistant_only', _with_loss('assistant_only')),
    ]
    return run_variants(setup, 'branch', variants)


def manner_sweep(setup: ExperimentSetup) -> List[Dict]:
    variants = [
        (m.value, lambda cfg, m=m: replace(cfg, manner=m.value, jitter_count=None))
        for m in PerturbationManner
    ]
    return run_variants(setup, 'manner', variants)


def count_sweep(setup: ExperimentSetup, counts: Optional[Sequence[int]] = None) -> List[Dict]:
    n = setup.train.model.n_points
    if not counts:
        counts = (0, n // 4, n // 2, 3 * n // 4, n)
    variants = [(str(c), lambda cfg, c=c: replace(cfg, jitter_count=int(c))) for c in counts]
    return run_variants(setup, 'count', variants)


def std_sweep(setup: ExperimentSetup, stds: Sequence[float] = DEFAULT_STDS) -> List[Dict]:
    variants = [(f"{s:g}", lambda cfg, s=s: replace(cfg, std=float(s))) for s in stds]
    return run_variants(setup, 'std', variants)


def loss_ablation(setup: ExperimentSetup) -> List[Dict]:
    return run_variants(setup, 'loss', [(name, _with_loss(name)) for name in LOSS_ABLATION])


def consistency_ablation(setup: ExperimentSetup) -> List[Dict]:
    names = SEGMENTATION_CONSISTENCY if setup.task == TaskVariant.SEGMENTATION else CLASSIFICATION_CONSISTENCY
    return run_variants(setup, 'consistency', [(name, _with_loss(name)) for name in names])


def pretraining_gain(setup: ExperimentSetup) -> List[Dict]:
    """Probe metric of the pre-trained network next to the same network at its initialization."""
    rows = run_variants(setup, 'gain', [('trained', lambda cfg: cfg)])
    for seed in setup.seeds:
        report = evaluate(init_params(setup.train.model, seed=seed), setup, seed)
        rows.append({
            'experiment': 'gain',
            'variant': 'random_init',
            'seed': seed,
            'metric': report.metric,
            'final_loss': float('nan'),
        })
    return rows


def density_robustness(setup: ExperimentSetup, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> List[Dict]:
    """
    Classification probe fitted on full-density global features and tested
    on clouds subsampled to fractions of N.
    """
    rows = []
    cfg_model = setup.train.model
    n = cfg_model.n_points
    for seed in setup.seeds:
        cfg = replace(setup.train, seed=seed)
        run_dir = setup.out_dir / 'density' / f"seed{seed}" if setup.out_dir else None
        store, _ = pretrain(setup.clouds, cfg, run_dir)
        train, test = stratified_split(np.arange(len(setup.clouds)), setup.labels, setup.probe_fraction, seed)
        full = extract_features(store, setup.clouds, cfg_model, 'classify')
        for fraction in fractions:
            size = max(8, int(round(n * fraction)))
            sparse = [
                resample(setup.clouds[i], size, derive_seed(seed, 'density', size, int(i))) for i in test
            ]
            test_x = extract_features(store, sparse, cfg_model, 'classify')
            accuracy, _ = fit_and_score(full[train], setup.labels[train], test_x, setup.labels[test], seed)
            rows.append({
                'experiment': 'density', 'variant': f"{fraction:g}", 'seed': seed,
                'points': size, 'metric': accuracy,
            })
    return rows


EXPERIMENTS: Dict[str, Callable[..., List[Dict]]] = {
    'branch': branch_ablation,
    'manner': manner_sweep,
    'count': count_sweep,
    'std': std_sweep,
    'loss': loss_ablation,
    'consistency': consistency_ablation,
    'density': density_robustness,
    'gain': pretraining_gain,
}


def run_experiment(name: str, setup: ExperimentSetup, **kwargs) -> List[Dict]:
    if name not in EXPERIMENTS:
        raise InvalidSpecError(f"unknown experiment '{name}' (known: {', '.join(EXPERIMENTS)})")
    rows = EXPERIMENTS[name](setup, **kwargs)
    for variant, median in summarize(rows).items():
        logger.info(f"[{name}] {variant}: median metric {median:.4f}")
    return rows


def write(rows: Sequence[Dict], path: Union[str, Path]) -> Path:
    return write_csv(rows, path)
