"""
Command-line surface of the CP-Net pipeline.

Every command is a function of (flags, config, input files). Failures are
recorded in an ``ErrorReport`` and turned into exit codes: 0 ok, 2 usage,
3 I/O, 4 numerical.
"""

import argparse
import csv
import json
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.autodiff.params import ParamStore
from src.cloud.formats import load_cloud, save_cloud
from src.cloud.point_cloud import PointCloud, ShapeKind
from src.cloud.shapes import make_shape_dataset
from src.config.config_loader import ConfigLoader
from src.disentangle.decomposition import disentangle
from src.disentangle.perturbation import PerturbationManner, jitter_count_variant, perturb
from src.geometry.spectral import SCORERS, get_scorer
from src.model.config import CpNetConfig, TaskVariant
from src.model.cpnet import check_store, init_params
from src.system.errors import CloudIOError, ErrorReport, GradientCheckError, exit_code_for
from src.training.checkpoint import load_checkpoint
from src.training.experiments import run_experiment, write
from src.training.integrity import GradCheckSetup, check_full_loss
from src.training.metrics import write_csv
from src.training.probes import dump_features, extract_features, linear_probe_classify, linear_probe_segment
from src.training.trainer import pretrain

INDEX_FILE = 'index.csv'
_SUFFIX = {'xyz': '.xyz', 'off': '.off', 'ply_ascii': '.ply'}

Dataset = Tuple[List[PointCloud], np.ndarray, List[str]]


# datasets

def write_index(rows: Sequence[Dict[str, Any]], out_dir: Path) -> Path:
    return write_csv(rows, out_dir / INDEX_FILE, fields=('file', 'id', 'kind', 'label', 'n_points'))


def load_index(data_dir: Path) -> Dataset:
    """Clouds, class labels and categories listed in a directory's index."""
    index = Path(data_dir) / INDEX_FILE
    if not index.exists():
        raise CloudIOError(f"no {INDEX_FILE} in {data_dir}")
    try:
        with open(index, newline='', encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise CloudIOError(f"cannot read {index}: {e}") from e
    if not rows:
        raise CloudIOError(f"{index} lists no clouds")
    clouds = [replace(load_cloud(index.parent / row['file']), id=row['id']) for row in rows]
    labels = np.asarray([int(row['label']) for row in rows], dtype=np.int64)
    return clouds, labels, [row['kind'] for row in rows]


def _dataset(args: argparse.Namespace, config: ConfigLoader) -> Dataset:
    if getattr(args, 'data', None):
        return load_index(Path(args.data))
    clouds, labels = config.dataset()
    return clouds, labels, [c.id.split('-')[0] for c in clouds]


def _store(ckpt: Optional[str], cfg: CpNetConfig, seed: int) -> ParamStore:
    if not ckpt:
        logger.info("No checkpoint given; probing randomly initialized features")
        return init_params(cfg, seed=seed)
    store = load_checkpoint(ckpt).store
    check_store(store, cfg)
    return store


def _probe_variant(args: argparse.Namespace, config: ConfigLoader) -> str:
    if args.task:
        return args.task
    return 'classify' if config.task == TaskVariant.CLASSIFICATION else 'segment'


def _probe_fraction(args: argparse.Namespace, config: ConfigLoader, variant: str) -> float:
    if args.train_fraction:
        return args.train_fraction
    if config['probe_train_fraction']:
        return config['probe_train_fraction']
    return 2.0 / 3.0 if variant == 'classify' else 0.1


def _write_json(payload: Dict[str, Any], path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding='utf-8')
    except OSError as e:
        raise CloudIOError(f"cannot write {path}: {e}") from e
    return path


# commands

def cmd_gen(args: argparse.Namespace, config: ConfigLoader) -> int:
    """Write synthetic shapes plus a labels index."""
    out = Path(args.out)
    clouds, labels = make_shape_dataset(args.kind, args.count, args.n, config['seed'], args.noise)
    rows = []
    for cloud, label in zip(clouds, labels):
        name = cloud.id + _SUFFIX[args.format]
        save_cloud(cloud, out / name, args.format)
        rows.append({
            'file': name, 'id': cloud.id, 'kind': cloud.id.split('-')[0],
            'label': int(label), 'n_points': len(cloud),
        })
    write_index(rows, out)
    print(f"wrote {len(rows)} clouds to {out}")
    return 0


def cmd_decompose(args: argparse.Namespace, config: ConfigLoader) -> int:
    """Split a cloud into contour and content files plus a score report."""
    cloud = load_cloud(args.input)
    d = disentangle(cloud, args.k, get_scorer(args.scorer))
    save_cloud(cloud.subset(d.contour_idx, id=f"{cloud.id}-contour"), args.out_contour)
    save_cloud(cloud.subset(d.content_idx, id=f"{cloud.id}-content"), args.out_content)
    report = Path(args.report) if args.report else Path(args.out_contour).with_suffix('.scores.json')
    _write_json({
        'source': str(args.input),
        'n': len(cloud),
        'm': d.m,
        'k_graph': d.scores.k_graph,
        'scorer': args.scorer,
        'dropped': d.dropped,
        'contour_idx': d.contour_idx.tolist(),
        'content_idx': d.content_idx.tolist(),
        'scores': d.scores.scores.tolist(),
    }, report)
    print(f"contour {d.m} points -> {args.out_contour}; content {d.m} points -> {args.out_content}")
    return 0


def cmd_perturb(args: argparse.Namespace, config: ConfigLoader) -> int:
    """
    Write the perturbed cloud.

    Surviving points keep their input order, normals and part labels, so
    ``--std 0`` reproduces the input file.
    """
    cloud = load_cloud(args.input)
    d = disentangle(cloud, args.k)
    seed = config['seed']
    if args.count is not None:
        result = jitter_count_variant(d, args.count, args.std, seed, args.clip)
    else:
        result = perturb(d, args.manner, args.std, seed, args.clip)
    order = np.argsort(result.source_idx, kind='stable')
    out = cloud.subset(result.source_idx[order]).with_points(result.points[order])
    save_cloud(out, args.out)
    print(f"manner {result.manner.value}: {len(out)} points, {result.jittered} jittered -> {args.out}")
    return 0


def cmd_pretrain(args: argparse.Namespace, config: ConfigLoader) -> int:
    out = Path(config['out_dir'])
    config.echo(out)
    clouds, _, _ = _dataset(args, config)
    _, history = pretrain(clouds, config.train_config(), out, resume_from=args.resume)
    totals = history.epoch_totals()
    if totals:
        print(f"epoch 1 total {totals[0]:.6f}, epoch {len(totals)} total {totals[-1]:.6f}")
    print(f"checkpoints and metrics in {out}")
    return 0


def cmd_probe(args: argparse.Namespace, config: ConfigLoader) -> int:
    """Fit a linear probe on frozen features and write a ProbeReport."""
    variant = _probe_variant(args, config)
    fraction = _probe_fraction(args, config, variant)
    cfg = config.model_config()
    store = _store(args.ckpt, cfg, config['seed'])
    clouds, labels, categories = _dataset(args, config)
    features = extract_features(store, clouds, cfg, variant)
    if variant == 'classify':
        report = linear_probe_classify(features, labels, fraction, config['seed'])
    else:
        parts = [c.part_labels for c in clouds]
        report = linear_probe_segment(features, parts, categories, fraction, config['seed'])
    path = report.save(args.out or Path(config['out_dir']) / f"probe_{variant}.json")
    print(f"{variant} probe metric {report.metric:.4f} -> {path}")
    return 0


def cmd_features(args: argparse.Namespace, config: ConfigLoader) -> int:
    variant = _probe_variant(args, config)
    cfg = config.model_config()
    store = _store(args.ckpt, cfg, config['seed'])
    clouds, labels, _ = _dataset(args, config)
    features = extract_features(store, clouds, cfg, variant)
    path = dump_features(
        args.out or Path(config['out_dir']) / f"features_{variant}.csv",
        features, clouds, labels.tolist() if variant == 'classify' else None,
    )
    print(f"features of {len(clouds)} clouds -> {path}")
    return 0


def cmd_gradcheck(args: argparse.Namespace, config: ConfigLoader) -> int:
    """Finite-difference check of the full dual-branch loss; exit 0 iff the error is below tol."""
    setup = GradCheckSetup(
        n_points=args.n, batch=args.batch, seed=config['seed'],
        sample=args.sample or None, tol=args.tol,
    )
    report = check_full_loss(setup)
    print(
        f"max relative error {report.max_rel_error:.3e} "
        f"({report.checked} checked, {report.skipped} skipped at kinks)"
    )
    if not report.passed(args.tol):
        raise GradientCheckError(report.max_rel_error, args.tol)
    return 0


def cmd_ablate(args: argparse.Namespace, config: ConfigLoader) -> int:
    """Run one experiment runner and write its rows as CSV."""
    name = config['experiment']
    out = Path(config['out_dir'])
    config.echo(out)
    rows = run_experiment(name, config.experiment_setup(out), **config.experiment_kwargs())
    path = write(rows, out / f"ablation_{name}.csv")
    print(f"{len(rows)} runs -> {path}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, ConfigLoader], int]] = {
    'gen': cmd_gen,
    'decompose': cmd_decompose,
    'perturb': cmd_perturb,
    'pretrain': cmd_pretrain,
    'probe': cmd_probe,
    'features': cmd_features,
    'gradcheck': cmd_gradcheck,
    'ablate': cmd_ablate,
}


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default='config.yaml', help='Flat YAML configuration file')
    common.add_argument('--seed', type=int, help='Override the config seed')
    common.add_argument('--log-level', help='Override the config log level')

    parser = argparse.ArgumentParser(prog='cpnet', description='CP-Net contour-perturbed pre-training at desk scale')
    sub = parser.add_subparsers(dest='command', required=True)

    def add(name: str, text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=text, parents=[common])

    p = add('gen', 'Generate synthetic shapes and a labels index')
    p.add_argument('--kind', nargs='+', default=['sphere'], choices=[k.value for k in ShapeKind])
    p.add_argument('--n', type=int, default=256, help='Points per cloud (>= 8)')
    p.add_argument('--count', type=_positive, default=10, help='Clouds per kind')
    p.add_argument('--noise', type=float, default=0.0, help='Gaussian coordinate noise')
    p.add_argument('--format', default='xyz', choices=sorted(_SUFFIX))
    p.add_argument('--out', required=True, help='Output directory')

    p = add('decompose', 'Split a cloud into contour and content halves')
    p.add_argument('--in', dest='input', required=True, help='Input cloud file')
    p.add_argument('--k', type=int, default=16, help='Neighbours of the scoring graph')
    p.add_argument('--scorer', default='laplacian', choices=sorted(SCORERS))
    p.add_argument('--out-contour', required=True)
    p.add_argument('--out-content', required=True)
    p.add_argument('--report', help='Score report JSON (default: next to the contour file)')

    p = add('perturb', 'Apply a perturbation manner to a cloud')
    p.add_argument('--in', dest='input', required=True, help='Input cloud file')
    p.add_argument('--manner', default='H', choices=[m.value for m in PerturbationManner])
    p.add_argument('--std', type=float, default=0.02, help='Jitter standard deviation')
    p.add_argument('--count', type=int, help='Jitter only this many top-scored points')
    p.add_argument('--clip', type=float, help='Symmetric jitter clip')
    p.add_argument('--k', type=int, default=16, help='Neighbours of the scoring graph')
    p.add_argument('--out', required=True, help='Output cloud file')

    p = add('pretrain', 'Self-supervised pre-training')
    p.add_argument('--data', help='Directory with an index.csv (default: the config dataset)')
    p.add_argument('--epochs', type=int, help='Override the config epochs')
    p.add_argument('--out', help='Override the config out_dir')
    p.add_argument('--resume', help='Checkpoint to continue from')

    for name, text in (('probe', 'Linear probe on frozen features'), ('features', 'Dump frozen features as CSV')):
        p = add(name, text)
        p.add_argument('--ckpt', help='Checkpoint (default: random initialization)')
        p.add_argument('--task', choices=['classify', 'segment'])
        p.add_argument('--data', help='Directory with an index.csv (default: the config dataset)')
        p.add_argument('--out', help='Output file')
        if name == 'probe':
            p.add_argument('--train-fraction', type=float, help='Labelled share of the probe split')

    p = add('gradcheck', 'Finite-difference check of the full loss')
    p.add_argument('--n', type=int, default=64, help='Points per cloud')
    p.add_argument('--batch', type=_positive, default=2, help='Clouds per batch')
    p.add_argument('--sample', type=int, default=256, help='Coordinates to check (0: all)')
    p.add_argument('--tol', type=float, default=1e-4, help='Maximum relative error')

    p = add('ablate', 'Run one ablation experiment')
    p.add_argument('--experiment', help='Override the config experiment')
    p.add_argument('--out', help='Override the config out_dir')
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
    """Config keys set on the command line."""
    values = {
        'seed': args.seed,
        'log_level': args.log_level,
        'epochs': getattr(args, 'epochs', None),
        'experiment': getattr(args, 'experiment', None),
    }
    if args.command in ('pretrain', 'ablate'):
        values['out_dir'] = args.out
    return {key: value for key, value in values.items() if value is not None}


def run(
    argv: Optional[Sequence[str]] = None,
    configure_logging: Optional[Callable[[ConfigLoader], None]] = None
) -> int:
    """
    Parse ``argv``, load the config and run one command.

    Args:
        argv: Command-line arguments, sys.argv[1:] when None
        configure_logging: Called with the loaded config before the command runs

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    report = ErrorReport()
    try:
        config = ConfigLoader(args.config, overrides_from(args))
        if configure_logging is not None:
            configure_logging(config)
        return COMMANDS[args.command](args, config)
    except Exception as e:
        report.record(args.command, e)
        code = exit_code_for(e)
        if code == 1:
            logger.exception(f"Unexpected failure in '{args.command}'")
        return code
