"""Finite-difference check of the full dual-branch pre-training loss."""

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

from loguru import logger

from src.autodiff.gradcheck import GradCheckReport, grad_check
from src.autodiff.params import ParamStore
from src.autodiff.tensor import Tensor
from src.cloud.point_cloud import PointCloud
from src.cloud.shapes import make_shape_dataset
from src.disentangle.decomposition import disentangle
from src.disentangle.perturbation import PerturbedCloud, perturb
from src.losses.composition import LossConfig, batch_loss
from src.model.config import CpNetConfig
from src.model.cpnet import CpNet, dual_forward, init_params
from src.model.layers import ForwardMode
from src.system.errors import InvalidSpecError
from src.utils.seeding import derive_seed

# every term on, both branches
FULL_PRESET = 'seg_c'
CHECK_KINDS = ('sphere', 'cube', 'torus', 'cylinder', 'barbell')


@dataclass(frozen=True)
class GradCheckSetup:
    """Toy network and data of the full-loss check."""
    n_points: int = 64
    batch: int = 2
    seed: int = 0
    sample: Optional[int] = 256
    h: float = 1e-5
    abs_floor: float = 1e-3
    tol: float = 1e-4

    def model_config(self) -> CpNetConfig:
        return CpNetConfig.for_task(
            'segmentation', self.n_points, channels_per_level=(8, 16, 16, 32), k_neighbors=8, head_width=8,
        )


def _batch(setup: GradCheckSetup) -> Tuple[List[PointCloud], List[PerturbedCloud]]:
    if setup.batch < 1:
        raise InvalidSpecError(f"batch must be >= 1, got {setup.batch}")
    kinds = [CHECK_KINDS[i % len(CHECK_KINDS)] for i in range(setup.batch)]
    clouds = []
    for i, kind in enumerate(kinds):
        shape, _ = make_shape_dataset([kind], 1, setup.n_points, derive_seed(setup.seed, 'data', 'gradcheck', i))
        clouds.extend(shape)
    perturbed = [
        perturb(disentangle(cloud), 'H', 0.02, derive_seed(setup.seed, 'noise', 'gradcheck', i))
        for i, cloud in enumerate(clouds)
    ]
    return clouds, perturbed


def full_loss(setup: GradCheckSetup) -> Tuple[Callable[[ParamStore], Tensor], ParamStore]:
    """The total loss as a function of the parameters, plus a fresh store."""
    cfg = setup.model_config()
    store = init_params(cfg, seed=setup.seed)
    loss_cfg = LossConfig.preset(FULL_PRESET, batch_size=setup.batch)
    clouds, perturbed = _batch(setup)
    mode = ForwardMode(training=True, bn_momentum=0.1)

    def f(params: ParamStore) -> Tensor:
        model = CpNet(cfg, params, seed=setup.seed)
        outputs = [dual_forward(model, c, p, mode) for c, p in zip(clouds, perturbed)]
        total, _ = batch_loss(outputs, clouds, loss_cfg, warn=False)
        return total

    return f, store


def check_full_loss(setup: GradCheckSetup = GradCheckSetup()) -> GradCheckReport:
    """Run the finite-difference check over the full dual-branch loss."""
    f, store = full_loss(setup)
    logger.info(
        f"Gradient check on N={setup.n_points}, B={setup.batch}, {store.num_parameters()} parameters, "
        f"{'all' if setup.sample is None else setup.sample} coordinates"
    )
    return grad_check(f, store, h=setup.h, sample=setup.sample, seed=setup.seed, abs_floor=setup.abs_floor)
