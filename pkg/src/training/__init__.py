"""Pre-training, checkpoints, linear probes and ablation runners."""

from .schedules import lr_at, bn_momentum_at
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, config_fingerprint
from .metrics import MetricsWriter, write_csv
from .trainer import TrainConfig, Trainer, TrainingHistory, pretrain, prepare_dataset
from .probes import (
    ProbeReport, FeatureExtractor, extract_features, linear_probe_classify, linear_probe_segment,
    instance_iou, dump_features,
)
from .experiments import ExperimentSetup, EXPERIMENTS, run_experiment, summarize
from .integrity import GradCheckSetup, check_full_loss, full_loss

__all__ = [
    'lr_at', 'bn_momentum_at',
    'Checkpoint', 'save_checkpoint', 'load_checkpoint', 'config_fingerprint',
    'MetricsWriter', 'write_csv',
    'TrainConfig', 'Trainer', 'TrainingHistory', 'pretrain', 'prepare_dataset',
    'ProbeReport', 'FeatureExtractor', 'extract_features', 'linear_probe_classify', 'linear_probe_segment',
    'instance_iou', 'dump_features',
    'ExperimentSetup', 'EXPERIMENTS', 'run_experiment', 'summarize',
    'GradCheckSetup', 'check_full_loss', 'full_loss',
]
