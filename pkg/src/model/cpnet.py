"""
The CP-Net backbone, its heads, and the weight-shared dual-branch pass.

Point geometry (sampling, grouping, interpolation weights) is computed in
numpy and enters the tape as constants; only features carry gradients.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.autodiff import ops
from src.autodiff.params import ParamStore
from src.autodiff.tensor import Tensor, constant
from src.cloud.point_cloud import PointCloud
from src.disentangle.perturbation import PerturbedCloud
from src.geometry.distances import idw_weights
from src.geometry.neighbors import fps, knn_query
from src.model.config import CpNetConfig, FoldingGrid, TaskVariant
from src.model.layers import ForwardMode, INFERENCE, SharedMLP
from src.system.errors import ShapeMismatchError, SizeMismatchError, VariantMismatchError

RELATION_DIM = 10


@dataclass(frozen=True)
class SamplingPlan:
    """
    FPS centers of every level.

    ``local[l]`` indexes the rows of level l-1 (the input cloud for l = 0);
    ``absolute[l]`` indexes the input cloud directly.
    """
    local: Tuple[np.ndarray, ...]
    absolute: Tuple[np.ndarray, ...]

    def remap(self, rows: np.ndarray) -> 'SamplingPlan':
        """The same centers in another row order; ``rows[i]`` is the new row of old row i."""
        local = (rows[self.local[0]],) + self.local[1:]
        return SamplingPlan(local=local, absolute=tuple(rows[a] for a in self.absolute))


def build_plan(points: np.ndarray, points_per_level: Sequence[int]) -> SamplingPlan:
    absolute = np.arange(len(points))
    local_levels, absolute_levels = [], []
    for m in points_per_level:
        local = fps(points[absolute], m)
        absolute = absolute[local]
        local_levels.append(local)
        absolute_levels.append(absolute)
    return SamplingPlan(local=tuple(local_levels), absolute=tuple(absolute_levels))


def interpolate(features: Tensor, src_points: np.ndarray, query_points: np.ndarray, k: int = 3) -> Tensor:
    """Differentiable inverse-distance interpolation; the weights are constants."""
    idx, weights = idw_weights(src_points, query_points, min(k, len(src_points)))
    gathered = ops.gather_rows(features, idx)
    return ops.sum(ops.mul(gathered, constant(weights[:, :, None])), axis=1)


def relation_vectors(centers: np.ndarray, neighbors: np.ndarray, absolute: bool = True) -> np.ndarray:
    """[|pi - pj|, pi - pj, pi, pj] for every (center, neighbour) pair, shape (M, k, 10)."""
    pi = np.broadcast_to(centers[:, None, :], neighbors.shape)
    diff = pi - neighbors
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    h = np.concatenate([dist, diff, pi, neighbors], axis=-1)
    if not absolute:
        h[..., 4:] = 0.0
    return h


class RSConvLevel:
    """Relation-shape convolution: relation-generated weights, max over neighbours, channel MLP."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, cfg: CpNetConfig, seed: int):
        self.c_in = c_in
        self.c_out = c_out
        self.k = cfg.k_neighbors
        self.absolute = cfg.relation_absolute
        self.weight_mlp = SharedMLP(
            store, f"{name}.weight_mlp", (RELATION_DIM, cfg.weight_hidden, c_in + 3), seed,
            batch_norm=cfg.use_batch_norm, final_activation=False,
        )
        self.channel_mlp = SharedMLP(store, f"{name}.channel_mlp", (c_in + 3, c_out), seed, batch_norm=cfg.use_batch_norm)

    def __call__(
        self,
        points_in: np.ndarray,
        feats_in: Optional[Tensor],
        centers: np.ndarray,
        mode: ForwardMode
    ) -> Tensor:
        if feats_in is not None and feats_in.shape != (len(points_in), self.c_in):
            raise ShapeMismatchError(f"features {feats_in.shape} do not match {len(points_in)} points x {self.c_in}")
        center_points = points_in[centers]
        k = min(self.k, len(points_in))
        nbr, _ = knn_query(points_in, center_points, k)
        nbr_points = points_in[nbr]

        relative = constant(nbr_points - center_points[:, None, :])
        grouped = relative if feats_in is None else ops.concat([ops.gather_rows(feats_in, nbr), relative], axis=-1)
        weights = self.weight_mlp(constant(relation_vectors(center_points, nbr_points, self.absolute)), mode)
        pooled, _ = ops.max_pool(ops.mul(weights, grouped), axis=1)
        return self.channel_mlp(pooled, mode)


class TransitionUp:
    """Q_prev = MLP(MLP(interp(Q)) + MLP(F_prev))."""

    def __init__(self, store: ParamStore, name: str, c_coarse: int, c_fine: int, cfg: CpNetConfig, seed: int):
        bn = cfg.use_batch_norm
        self.idw_k = cfg.idw_k
        self.inner = SharedMLP(store, f"{name}.inner", (c_coarse, c_fine), seed, batch_norm=bn)
        self.skip = SharedMLP(store, f"{name}.skip", (c_fine, c_fine), seed, batch_norm=bn)
        self.outer = SharedMLP(store, f"{name}.outer", (c_fine, c_fine), seed, batch_norm=bn)

    def __call__(
        self,
        q: Tensor,
        f_prev: Tensor,
        points: np.ndarray,
        points_prev: np.ndarray,
        mode: ForwardMode
    ) -> Tensor:
        if q.shape[0] != len(points) or f_prev.shape[0] != len(points_prev):
            raise ShapeMismatchError("transition-up features and point sets are misaligned")
        lifted = self.inner(interpolate(q, points, points_prev, self.idw_k), mode)
        return self.outer(ops.add(lifted, self.skip(f_prev, mode)), mode)


@dataclass
class EncoderOutput:
    level_points: List[np.ndarray]
    level_idx: List[np.ndarray]
    features: List[Tensor]
    decoded: List[Tensor] = field(default_factory=list)
    heads: List[Tensor] = field(default_factory=list)


@dataclass
class BranchResult:
    """One branch's pass; ``point_idx`` maps Y rows to input rows."""
    points: np.ndarray
    source_idx: np.ndarray
    plan: SamplingPlan
    encoder: EncoderOutput
    Y: Tensor
    G: Tensor
    point_idx: np.ndarray
    reconstruction: Tensor
    normals: Optional[Tensor] = None

    @property
    def source_rows(self) -> np.ndarray:
        """Original-cloud index of every Y row."""
        return self.source_idx[self.point_idx]


@dataclass
class BranchOutputs:
    basic: Optional[BranchResult]
    assistant: Optional[BranchResult]
    pairs: Tuple[np.ndarray, np.ndarray] = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    @property
    def Y(self) -> Tensor:
        return self.basic.Y

    @property
    def G(self) -> Tensor:
        return self.basic.G

    @property
    def Y_prime(self) -> Tensor:
        return self.assistant.Y

    @property
    def G_prime(self) -> Tensor:
        return self.assistant.G

    @property
    def normals(self) -> Optional[Tensor]:
        return self.basic.normals if self.basic is not None else None

    @property
    def is_dual(self) -> bool:
        return self.basic is not None and self.assistant is not None


class CpNet:
    """
    Shared-parameter CP-Net.

    Constructing the model declares every parameter in ``store`` (seeded
    Glorot init) or binds to parameters already there.
    """

    def __init__(self, cfg: CpNetConfig, store: Optional[ParamStore] = None, seed: int = 0):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore()
        self.levels: List[RSConvLevel] = []
        c_in = 0
        for level, c_out in enumerate(cfg.channels_per_level):
            self.levels.append(RSConvLevel(self.store, f"encoder.level{level}", c_in, c_out, cfg, seed))
            c_in = c_out

        self.ups: List[TransitionUp] = []
        self.heads: List[SharedMLP] = []
        if cfg.task_variant == TaskVariant.SEGMENTATION:
            channels = cfg.channels_per_level
            for level in range(1, cfg.levels):
                self.ups.append(TransitionUp(self.store, f"decoder.up{level}", channels[level], channels[level - 1], cfg, seed))
            for level, c in enumerate(channels):
                self.heads.append(SharedMLP(
                    self.store, f"head.level{level}", (c, cfg.head_width), seed, batch_norm=cfg.use_batch_norm
                ))

        width = cfg.feature_width
        self.normal_head = None
        if cfg.normal_head:
            self.normal_head = SharedMLP(
                self.store, "normal_head", (3 + 2 * width, cfg.normal_hidden, 3), seed,
                batch_norm=False, final_activation=False,
            )
        hidden = cfg.fold_hidden
        self.fold_first = SharedMLP(self.store, "fold.first", (width + 2, hidden, hidden, 3), seed,
                                    batch_norm=False, final_activation=False)
        self.fold_second = SharedMLP(self.store, "fold.second", (width + 3, hidden, hidden, 3), seed,
                                     batch_norm=False, final_activation=False)
        self._grids = {}

    def grid(self, n: int) -> FoldingGrid:
        if n not in self._grids:
            side = self.cfg.fold_grid_side if self.cfg.fold_grid_side ** 2 >= n else 0
            self._grids[n] = FoldingGrid.build(n, side)
        return self._grids[n]

    def encode(self, points: np.ndarray, plan: SamplingPlan, mode: ForwardMode) -> EncoderOutput:
        out = EncoderOutput(level_points=[], level_idx=[], features=[])
        prev_points, feats = points, None
        for level, conv in enumerate(self.levels):
            feats = conv(prev_points, feats, plan.local[level], mode)
            prev_points = points[plan.absolute[level]]
            out.level_points.append(prev_points)
            out.level_idx.append(plan.absolute[level])
            out.features.append(feats)
        return out


def rsconv_level(
    conv: RSConvLevel,
    points_in: np.ndarray,
    feats_in: Optional[Tensor],
    points_out_count: int,
    mode: ForwardMode = INFERENCE
) -> Tuple[np.ndarray, Tensor]:
    """One RS-Conv level with its own FPS: returns (points_out, feats_out)."""
    centers = fps(points_in, points_out_count)
    return points_in[centers], conv(points_in, feats_in, centers, mode)


def transition_up(
    up: TransitionUp,
    q: Tensor,
    f_prev: Tensor,
    points: np.ndarray,
    points_prev: np.ndarray,
    mode: ForwardMode = INFERENCE
) -> Tensor:
    return up(q, f_prev, points, points_prev, mode)


def decode(model: CpNet, enc: EncoderOutput, mode: ForwardMode) -> List[Tensor]:
    """Transition-up chain from the coarsest level; returns Q for every level, finest first."""
    q = enc.features[-1]
    decoded = [q]
    for level in range(len(enc.features) - 1, 0, -1):
        q = model.ups[level - 1](q, enc.features[level - 1], enc.level_points[level], enc.level_points[level - 1], mode)
        decoded.append(q)
    return decoded[::-1]


def pointwise_head(
    model: CpNet,
    decoded: Sequence[Tensor],
    level_points: Sequence[np.ndarray],
    points: np.ndarray,
    mode: ForwardMode
) -> Tuple[Tensor, List[Tensor]]:
    """
    Propagate every decoded level to the input points and concatenate.

    Returns:
        (Y, per-level head outputs)
    """
    if model.cfg.task_variant != TaskVariant.SEGMENTATION:
        raise VariantMismatchError("the classification variant has no point-wise head")
    heads = [
        head(interpolate(q, lp, points, model.cfg.idw_k), mode)
        for head, q, lp in zip(model.heads, decoded, level_points)
    ]
    y = heads[0] if len(heads) == 1 else ops.concat(heads, axis=1)
    return y, heads


def global_feature(y: Tensor) -> Tensor:
    """Column-wise max over points."""
    return ops.max_pool(y, axis=0)[0]


def _tile(g: Tensor, n: int) -> Tensor:
    return ops.broadcast_to(ops.reshape(g, (1, g.shape[0])), (n, g.shape[0]))


def predict_normals(model: CpNet, points: np.ndarray, y: Tensor, g: Tensor) -> Tensor:
    """Unit normals from [p, y, G] through the shared light-weight MLP."""
    if model.normal_head is None:
        raise VariantMismatchError("model was built without a normal head")
    if y.shape[0] != len(points):
        raise ShapeMismatchError(f"{y.shape[0]} feature rows for {len(points)} points")
    inp = ops.concat([constant(points), y, _tile(g, len(points))], axis=1)
    return ops.l2_normalize(model.normal_head(inp, INFERENCE), axis=1)


def fold_reconstruct(model: CpNet, g: Tensor, grid: FoldingGrid) -> Tensor:
    """Two consecutive folds of the fixed grid conditioned on G."""
    tiled = _tile(g, grid.n)
    first = model.fold_first(ops.concat([tiled, constant(grid.grid)], axis=1), INFERENCE)
    return model.fold_second(ops.concat([tiled, first], axis=1), INFERENCE)


def single_forward(
    model: CpNet,
    points: np.ndarray,
    mode: ForwardMode = INFERENCE,
    plan: Optional[SamplingPlan] = None,
    source_idx: Optional[np.ndarray] = None,
    with_normals: bool = True
) -> BranchResult:
    """
    One branch of the network.

    Args:
        model: Bound CP-Net
        points: (N, 3) input coordinates, N = cfg.n_points
        mode: Training flag and batch-norm momentum
        plan: Sampling plan to reuse; computed from ``points`` when omitted
        source_idx: Original-cloud index of every input row
        with_normals: Run the normal head when the model has one

    Returns:
        BranchResult with Y, G, reconstruction and optional normals
    """
    points = np.asarray(points, dtype=np.float64)
    cfg = model.cfg
    if len(points) != cfg.n_points:
        raise SizeMismatchError(f"model expects {cfg.n_points} points, got {len(points)}")
    if plan is None:
        plan = build_plan(points, cfg.points_per_level)
    if source_idx is None:
        source_idx = np.arange(len(points))

    enc = model.encode(points, plan, mode)
    if cfg.task_variant == TaskVariant.SEGMENTATION:
        enc.decoded = decode(model, enc, mode)
        y, enc.heads = pointwise_head(model, enc.decoded, enc.level_points, points, mode)
        point_idx = np.arange(len(points))
    else:
        y = enc.features[-1]
        point_idx = enc.level_idx[-1]

    g = global_feature(y)
    normals = None
    if with_normals and model.normal_head is not None:
        normals = predict_normals(model, points[point_idx], y, g)
    recon = fold_reconstruct(model, g, model.grid(len(points)))
    return BranchResult(
        points=points, source_idx=np.asarray(source_idx), plan=plan, encoder=enc,
        Y=y, G=g, point_idx=point_idx, reconstruction=recon, normals=normals,
    )


def pair_rows(basic_sources: np.ndarray, assistant_sources: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Match Y rows of both branches on their original-cloud index."""
    first = {}
    for row, src in enumerate(assistant_sources.tolist()):
        first.setdefault(src, row)
    basic_rows = [row for row, src in enumerate(basic_sources.tolist()) if src in first]
    assistant_rows = [first[int(basic_sources[row])] for row in basic_rows]
    return np.asarray(basic_rows, dtype=np.int64), np.asarray(assistant_rows, dtype=np.int64)


def dual_forward(
    model: CpNet,
    original: PointCloud,
    perturbed: PerturbedCloud,
    mode: ForwardMode = INFERENCE
) -> BranchOutputs:
    """
    Basic branch on the original cloud, assistant branch on the perturbed
    one, both through the same parameters.

    When the perturbed rows are a permutation of the original points the
    assistant reuses the basic sampling plan, so Y rows pair up one to one.
    """
    if len(perturbed) != len(original):
        raise SizeMismatchError(f"branches need equal N (original {len(original)}, perturbed {len(perturbed)})")

    basic = single_forward(model, original.points, mode, with_normals=True)
    plan = None
    if perturbed.is_permutation:
        row_of_source = np.empty(len(perturbed), dtype=np.int64)
        row_of_source[perturbed.source_idx] = np.arange(len(perturbed))
        plan = basic.plan.remap(row_of_source)
    else:
        logger.debug("Assistant input is not a permutation; sampling it independently")
    assistant = single_forward(
        model, perturbed.points, mode, plan=plan, source_idx=perturbed.source_idx, with_normals=False
    )
    return BranchOutputs(basic=basic, assistant=assistant, pairs=pair_rows(basic.source_rows, assistant.source_rows))


def init_params(cfg: CpNetConfig, seed: int = 0) -> ParamStore:
    """A fresh store holding every parameter of the configured network."""
    store = ParamStore()
    CpNet(cfg, store, seed)
    logger.debug(f"Initialized {len(store)} parameter tensors ({store.num_parameters()} values)")
    return store


def check_store(store: ParamStore, cfg: CpNetConfig) -> None:
    """Raise ShapeMismatchError unless ``store`` holds exactly the parameters ``cfg`` needs."""
    expected = init_params(cfg, seed=0)
    missing = sorted(set(expected.names()) - set(store.names()))
    extra = sorted(set(store.names()) - set(expected.names()))
    if missing or extra:
        raise ShapeMismatchError(
            f"parameters do not match the model configuration (missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name in expected.names():
        if store[name].shape != expected[name].shape:
            raise ShapeMismatchError(f"parameter '{name}' has shape {store[name].shape}, model needs {expected[name].shape}")
