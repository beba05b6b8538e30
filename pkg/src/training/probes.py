"""
Frozen-feature evaluation: feature extraction and linear probes.

The probes fit a multinomial logistic regression on standardized frozen
features, the same linear hypothesis class as a linear SVM.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from src.autodiff.params import ParamStore
from src.cloud.point_cloud import PointCloud
from src.model.config import CpNetConfig, TaskVariant
from src.model.cpnet import CpNet, single_forward
from src.model.layers import INFERENCE
from src.system.errors import CloudIOError, DegenerateLabelsError, InvalidSpecError, VariantMismatchError
from src.training.metrics import write_csv

MAX_ITER = 2000


@dataclass
class ProbeReport:
    """Outcome of one linear probe; every metric lies in [0, 1]."""
    task: str
    train_fraction: float
    n_train: int
    n_test: int
    accuracy: Optional[float] = None
    instance_miou: Optional[float] = None
    category_miou: Optional[float] = None
    per_class: Dict[str, float] = field(default_factory=dict)

    @property
    def metric(self) -> float:
        """Headline number: accuracy for classification, instance mIoU for segmentation."""
        return self.accuracy if self.task == 'classify' else self.instance_miou

    def to_dict(self) -> Dict:
        return asdict(self)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding='utf-8')
        except OSError as e:
            raise CloudIOError(f"cannot write probe report {path}: {e}") from e
        return path


class FeatureExtractor:
    """Frozen basic-branch forward passes; one bound model per cloud size."""

    def __init__(self, store: ParamStore, cfg: CpNetConfig):
        self.store = store
        self.cfg = cfg
        self._models: Dict[int, CpNet] = {}

    def model(self, n: int) -> CpNet:
        if n not in self._models:
            cfg = self.cfg if n == self.cfg.n_points else self.cfg.with_points(n)
            self._models[n] = CpNet(cfg, self.store)
        return self._models[n]

    def global_features(self, cloud: PointCloud) -> np.ndarray:
        result = single_forward(self.model(len(cloud)), cloud.points, INFERENCE, with_normals=False)
        return result.G.numpy()

    def pointwise_features(self, cloud: PointCloud) -> np.ndarray:
        if self.cfg.task_variant != TaskVariant.SEGMENTATION:
            raise VariantMismatchError("per-point features need the segmentation variant")
        result = single_forward(self.model(len(cloud)), cloud.points, INFERENCE, with_normals=False)
        return result.Y.numpy()


def extract_features(
    store: ParamStore,
    clouds: Sequence[PointCloud],
    cfg: CpNetConfig,
    variant: str = 'classify'
) -> Union[np.ndarray, List[np.ndarray]]:
    """
    Frozen features, no augmentation, basic branch only.

    Args:
        store: Trained or freshly initialized parameters
        clouds: Clouds to embed
        cfg: Network configuration the store was built for
        variant: 'classify' for one G per cloud, 'segment' for per-point Y

    Returns:
        (num_clouds, C) array for 'classify'; list of (N_i, C) arrays for 'segment'
    """
    extractor = FeatureExtractor(store, cfg)
    if variant == 'classify':
        return np.stack([extractor.global_features(c) for c in clouds]) if clouds else np.zeros((0, cfg.feature_width))
    if variant == 'segment':
        return [extractor.pointwise_features(c) for c in clouds]
    raise VariantMismatchError(f"unknown feature variant '{variant}'")


def _check_labels(labels: np.ndarray) -> None:
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise DegenerateLabelsError(f"a probe needs at least 2 classes, got {len(classes)}")
    if counts.min() < 2:
        raise DegenerateLabelsError("every class needs at least 2 samples for a stratified split")


def _check_fraction(train_fraction: float) -> None:
    if not 0.0 < train_fraction < 1.0:
        raise InvalidSpecError(f"train_fraction must lie in (0, 1), got {train_fraction}")


def stratified_split(indices: np.ndarray, labels: np.ndarray, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    try:
        return train_test_split(indices, train_size=train_fraction, stratify=labels, random_state=seed % (2 ** 32))
    except ValueError as e:
        logger.warning(f"Stratified split impossible ({e}); falling back to a random split")
        return train_test_split(indices, train_size=train_fraction, random_state=seed % (2 ** 32))


def make_probe(seed: int = 0):
    return make_pipeline(StandardScaler(), LogisticRegression(max_iter=MAX_ITER, random_state=seed % (2 ** 32)))


def fit_and_score(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    seed: int = 0
) -> Tuple[float, Dict[str, float]]:
    """Accuracy and per-class accuracy of a probe trained on one split."""
    probe = make_probe(seed).fit(train_x, train_y)
    predicted = probe.predict(test_x)
    per_class = {
        str(label): float(np.mean(predicted[test_y == label] == label))
        for label in np.unique(test_y)
    }
    return float(np.mean(predicted == test_y)), per_class


def linear_probe_classify(
    features: np.ndarray,
    labels: np.ndarray,
    train_fraction: float = 2.0 / 3.0,
    seed: int = 0
) -> ProbeReport:
    """
    Logistic-regression probe on per-cloud features.

    Args:
        features: (num_clouds, C) frozen features
        labels: (num_clouds,) class labels
        train_fraction: Share of clouds used for fitting (stratified)
        seed: Split seed

    Returns:
        ProbeReport with held-out accuracy and per-class accuracy
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    _check_fraction(train_fraction)
    _check_labels(labels)
    train, test = stratified_split(np.arange(len(labels)), labels, train_fraction, seed)
    accuracy, per_class = fit_and_score(features[train], labels[train], features[test], labels[test], seed)
    logger.info(f"Classification probe: accuracy {accuracy:.4f} on {len(test)} held-out clouds")
    return ProbeReport(
        task='classify', train_fraction=train_fraction, n_train=len(train), n_test=len(test),
        accuracy=accuracy, per_class=per_class,
    )


def instance_iou(predicted: np.ndarray, truth: np.ndarray, parts: Sequence[int]) -> float:
    """Mean IoU over the parts present in the ground truth or the prediction."""
    ious = []
    for part in parts:
        in_pred = predicted == part
        in_true = truth == part
        union = np.sum(in_pred | in_true)
        if union == 0:
            continue
        ious.append(np.sum(in_pred & in_true) / union)
    return float(np.mean(ious)) if ious else 1.0


def linear_probe_segment(
    features: Sequence[np.ndarray],
    part_labels: Sequence[np.ndarray],
    categories: Sequence,
    train_fraction: float = 0.1,
    seed: int = 0
) -> ProbeReport:
    """
    Per-point logistic-regression probe on frozen point-wise features.

    Clouds (not points) are split, stratified by category. Parts are
    numbered per category; a cloud's prediction is restricted to the parts
    of its own category.

    Args:
        features: Per-cloud (N_i, C) features
        part_labels: Per-cloud (N_i,) part labels, numbered within the category
        categories: Category of every cloud
        train_fraction: Share of clouds with labels
        seed: Split seed

    Returns:
        ProbeReport with instance and category mIoU
    """
    _check_fraction(train_fraction)
    categories = np.asarray([str(c) for c in categories])
    if not len(features) == len(part_labels) == len(categories):
        raise InvalidSpecError("features, part labels and categories must align per cloud")
    for feats, labels in zip(features, part_labels):
        if labels is None or len(labels) != len(feats):
            raise DegenerateLabelsError("every cloud needs one part label per point")

    names = sorted(set(categories.tolist()))
    parts_of = {
        name: sorted(set(np.concatenate([part_labels[i] for i in np.flatnonzero(categories == name)]).tolist()))
        for name in names
    }
    offsets, columns = {}, 0
    for name in names:
        offsets[name] = columns
        columns += max(parts_of[name]) + 1
    if columns < 2:
        raise DegenerateLabelsError("segmentation probe needs at least 2 parts overall")

    train, test = stratified_split(np.arange(len(categories)), categories, train_fraction, seed)
    train_x = np.concatenate([features[i] for i in train])
    train_y = np.concatenate([np.asarray(part_labels[i]) + offsets[categories[i]] for i in train])
    if len(np.unique(train_y)) < 2:
        raise DegenerateLabelsError("training clouds carry a single part label")
    probe = make_probe(seed).fit(train_x, train_y)
    known = list(probe.classes_)

    instance, by_category = [], {name: [] for name in names}
    for i in test:
        name = categories[i]
        parts = parts_of[name]
        global_ids = [offsets[name] + p for p in parts]
        cols = [known.index(g) for g in global_ids if g in known]
        proba = probe.predict_proba(features[i])
        if cols:
            local = np.asarray([p for p, g in zip(parts, global_ids) if g in known])
            predicted = local[np.argmax(proba[:, cols], axis=1)]
        else:
            predicted = np.full(len(features[i]), -1)
        iou = instance_iou(predicted, np.asarray(part_labels[i]), parts)
        instance.append(iou)
        by_category[name].append(iou)

    per_class = {name: float(np.mean(v)) for name, v in by_category.items() if v}
    report = ProbeReport(
        task='segment', train_fraction=train_fraction, n_train=len(train), n_test=len(test),
        instance_miou=float(np.mean(instance)), category_miou=float(np.mean(list(per_class.values()))),
        per_class=per_class,
    )
    logger.info(
        f"Segmentation probe: instance mIoU {report.instance_miou:.4f}, "
        f"category mIoU {report.category_miou:.4f} on {len(test)} clouds"
    )
    return report


def dump_features(
    path: Union[str, Path],
    features: Union[np.ndarray, Sequence[np.ndarray]],
    clouds: Sequence[PointCloud],
    labels: Optional[Sequence] = None
) -> Path:
    """
    Write frozen features as CSV for plotting.

    Per-cloud features give one row per cloud (id, label, f0..); per-point
    features give one row per point (id, point, part, f0..).
    """
    rows = []
    if isinstance(features, np.ndarray) and features.ndim == 2 and len(features) == len(clouds):
        for i, (cloud, feats) in enumerate(zip(clouds, features)):
            row = {'id': cloud.id, 'label': '' if labels is None else labels[i]}
            row.update({f"f{j}": f"{v:.9g}" for j, v in enumerate(feats)})
            rows.append(row)
    else:
        for cloud, feats in zip(clouds, features):
            parts = cloud.part_labels
            for p, point_feats in enumerate(feats):
                row = {'id': cloud.id, 'point': p, 'part': '' if parts is None else int(parts[p])}
                row.update({f"f{j}": f"{v:.9g}" for j, v in enumerate(point_feats)})
                rows.append(row)
    return write_csv(rows, path)
