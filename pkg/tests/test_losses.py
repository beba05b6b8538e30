"""
Tests for the consistency, reconstruction and normal losses and their composition.
"""

from dataclasses import replace

import numpy as np
import pytest
from loguru import logger

from src.autodiff import ParamStore, Tape, backward, grad_check
from src.autodiff.tensor import Tensor, constant
from src.cloud.point_cloud import ShapeSpec
from src.cloud.shapes import gen_shape
from src.disentangle import disentangle, perturb
from src.losses import (
    PRESETS, BranchSet, LossConfig, batch_loss, chamfer_tensor, enabled_terms, loss_cg, loss_cl, loss_cl2g,
    loss_normal, loss_recon, total_loss
)
from src.model import CpNet, CpNetConfig, ForwardMode, dual_forward, single_forward
from src.model.cpnet import BranchOutputs
from src.system.errors import InvalidSpecError, ShapeMismatchError, SizeMismatchError, ZeroVectorError

EPS_TERM = np.log1p(np.exp(-10.0))


@pytest.fixture
def warnings():
    messages = []
    handler = logger.add(lambda m: messages.append(m.record['message']), level='WARNING')
    yield messages
    logger.remove(handler)


def brute_cl(y: np.ndarray, y_prime: np.ndarray, tau: float) -> float:
    y = y / np.linalg.norm(y, axis=1, keepdims=True)
    y_prime = y_prime / np.linalg.norm(y_prime, axis=1, keepdims=True)
    total = 0.0
    for i in range(len(y)):
        logits = [float(y[i] @ y_prime[j]) / tau for j in range(len(y))]
        total -= logits[i] - np.log(sum(np.exp(v) for v in logits))
    return total


def brute_cl2g(ys, y_primes, gs, g_primes, own, tau):
    def unit(v):
        return v / np.linalg.norm(v)

    total = 0.0
    for points, candidates in ((ys, g_primes), (y_primes, gs)):
        for y in points:
            logits = [float(unit(y) @ unit(g)) / tau for g in candidates]
            total -= logits[own] - np.log(sum(np.exp(v) for v in logits))
    return total


def seg_model() -> CpNet:
    cfg = CpNetConfig.for_task('segmentation', 32, channels_per_level=(8, 16, 16, 32), k_neighbors=8, head_width=8)
    return CpNet(cfg, seed=1)


def sample(seed: int = 0, kind: str = 'cylinder'):
    cloud = gen_shape(ShapeSpec(kind=kind, n_points=32, seed=seed))
    return cloud, perturb(disentangle(cloud, k_graph=8), 'H', std=0.02, seed=seed)


class TestGlobalConsistency:
    """Tests for 1 - cos(G, G')."""

    @pytest.mark.parametrize('g_prime, expected', [
        ([1.0, 2.0, 3.0], 0.0),
        ([-1.0, -2.0, -3.0], 2.0),
        ([2.0, -1.0, 0.0], 1.0),
    ])
    def test_reference_values(self, g_prime, expected):
        """Equal, antipodal and orthogonal globals."""
        assert loss_cg(constant([1.0, 2.0, 3.0]), constant(g_prime)).item() == pytest.approx(expected, abs=1e-12)

    def test_scale_invariant(self):
        """Only the direction matters."""
        a = loss_cg(constant([1.0, 2.0]), constant([3.0, 1.0])).item()
        b = loss_cg(constant([5.0, 10.0]), constant([0.3, 0.1])).item()
        assert a == pytest.approx(b)

    def test_zero_vector(self):
        """A zero global has no direction."""
        with pytest.raises(ZeroVectorError):
            loss_cg(constant([0.0, 0.0]), constant([1.0, 0.0]))

    def test_shape_mismatch(self):
        """Globals must have equal width."""
        with pytest.raises(ShapeMismatchError):
            loss_cg(constant([1.0, 0.0]), constant([1.0, 0.0, 0.0]))


class TestLocalConsistency:
    """Tests for the point-wise InfoNCE."""

    def test_single_point(self):
        """One candidate gives zero loss."""
        assert loss_cl(constant([[1.0, 2.0]]), constant([[3.0, 1.0]])).item() == pytest.approx(0.0, abs=1e-12)

    def test_orthonormal_pair(self):
        """Two orthonormal rows at tau 0.1 give 2 log(1 + e^-10)."""
        y = constant(np.eye(2))
        assert loss_cl(y, y, tau=0.1).item() == pytest.approx(2.0 * EPS_TERM, rel=1e-9)

    def test_matches_brute_force(self):
        """Equals the double-loop evaluation on random features."""
        rng = np.random.default_rng(0)
        y, y_prime = rng.normal(size=(16, 5)), rng.normal(size=(16, 5))
        assert loss_cl(constant(y), constant(y_prime)).item() == pytest.approx(brute_cl(y, y_prime, 0.1), abs=1e-9)

    def test_symmetric_variant(self):
        """The symmetric loss averages both anchor directions."""
        rng = np.random.default_rng(1)
        y, y_prime = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        expected = 0.5 * (brute_cl(y, y_prime, 0.1) + brute_cl(y_prime, y, 0.1))
        assert loss_cl(constant(y), constant(y_prime), symmetric=True).item() == pytest.approx(expected, abs=1e-9)

    def test_bad_tau(self):
        """The temperature must be positive."""
        with pytest.raises(InvalidSpecError):
            loss_cl(constant(np.eye(2)), constant(np.eye(2)), tau=0.0)

    def test_misaligned_rows(self):
        """Both branches need the same rows."""
        with pytest.raises(ShapeMismatchError):
            loss_cl(constant(np.eye(3)), constant(np.eye(2, 3)))

    def test_gradients(self):
        """The InfoNCE gradient matches finite differences."""
        rng = np.random.default_rng(2)
        store = ParamStore()
        store.declare('y', rng.normal(size=(5, 4)))
        y_prime = constant(rng.normal(size=(5, 4)))
        assert grad_check(lambda s: loss_cl(s['y'], y_prime), store).passed(1e-5)


class TestLocalToGlobal:
    """Tests for points against the batch of global features."""

    def test_orthogonal_globals(self):
        """Four points on their own global at tau 0.1 give 8 log(1 + e^-10)."""
        g = [constant([1.0, 0.0]), constant([0.0, 1.0])]
        y = constant(np.tile([1.0, 0.0], (4, 1)))
        assert loss_cl2g(y, y, g, g, own_index=0).item() == pytest.approx(8.0 * EPS_TERM, rel=1e-9)

    def test_batch_of_one_is_zero_with_warning(self, warnings):
        """A single candidate contributes nothing."""
        y = constant(np.random.default_rng(0).normal(size=(4, 3)))
        g = [constant([1.0, 2.0, 3.0])]
        assert loss_cl2g(y, y, g, g, own_index=0).item() == pytest.approx(0.0, abs=1e-12)
        assert any('batch of one' in m for m in warnings)

    def test_matches_brute_force(self):
        """Equals the double-loop evaluation for B = 3, N = 8."""
        rng = np.random.default_rng(3)
        ys, y_primes = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
        gs, g_primes = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        got = loss_cl2g(constant(ys), constant(y_primes), [constant(g) for g in gs],
                        [constant(g) for g in g_primes], own_index=1).item()
        assert got == pytest.approx(brute_cl2g(ys, y_primes, gs, g_primes, 1, 0.1), abs=1e-9)

    def test_bad_index(self):
        """own_index must lie in the batch."""
        g = [constant([1.0, 0.0])]
        with pytest.raises(ShapeMismatchError):
            loss_cl2g(constant(np.eye(2)), constant(np.eye(2)), g, g, own_index=1)


class TestReconstructionAndNormals:
    """Tests for Chamfer reconstruction and normal estimation."""

    def test_perfect_reconstruction(self):
        """Both branches reproducing P give zero."""
        p = np.random.default_rng(0).normal(size=(10, 3))
        assert loss_recon(p, constant(p), constant(p)).item() == 0.0

    def test_singleton_offset(self):
        """One point off by one in the assistant reconstruction gives 2."""
        p = np.zeros((1, 3))
        assert loss_recon(p, constant(p), constant([[1.0, 0.0, 0.0]])).item() == pytest.approx(2.0)

    def test_chamfer_tensor_matches_numpy(self):
        """The differentiable Chamfer equals the plain one."""
        from src.geometry.distances import chamfer
        rng = np.random.default_rng(4)
        p, q = rng.normal(size=(7, 3)), rng.normal(size=(9, 3))
        assert chamfer_tensor(p, constant(q)).item() == pytest.approx(chamfer(p, q), abs=1e-12)

    def test_normal_reference_values(self):
        """Aligned, antipodal and half-orthogonal predictions."""
        truth = np.tile([0.0, 0.0, 1.0], (4, 1))
        assert loss_normal(constant(truth), truth).item() == pytest.approx(0.0, abs=1e-12)
        assert loss_normal(constant(-truth), truth).item() == pytest.approx(2.0)
        half = np.array([[0, 0, 1], [0, 0, 1], [1, 0, 0], [0, 1, 0]], dtype=float)
        assert loss_normal(constant(half), truth).item() == pytest.approx(0.5)

    def test_normal_shape_mismatch(self):
        """Predictions and ground truth must align."""
        with pytest.raises(ShapeMismatchError):
            loss_normal(constant(np.ones((3, 3))), np.ones((2, 3)))


class TestComposition:
    """Tests for LossConfig, presets and total_loss."""

    def test_task_presets(self):
        """Segmentation uses local terms, classification global ones."""
        assert LossConfig.preset('segmentation').enabled == {'cl', 'recon', 'normal'}
        assert LossConfig.preset('classification').enabled == {'cg', 'cl', 'cl2g', 'recon'}
        assert LossConfig.preset('seg_c').enabled == {'cg', 'cl', 'cl2g', 'recon', 'normal'}
        assert LossConfig.preset('basic_only').branches is BranchSet.BASIC
        assert len(PRESETS) == 18

    def test_invalid_configs(self):
        """Unknown terms, empty sets and one-branch consistency are rejected."""
        with pytest.raises(InvalidSpecError):
            LossConfig(enabled={'chamfer'})
        with pytest.raises(InvalidSpecError):
            LossConfig(enabled=set())
        with pytest.raises(InvalidSpecError):
            LossConfig(enabled={'cl'}, branches=BranchSet.BASIC)
        with pytest.raises(InvalidSpecError):
            LossConfig.preset('everything')

    def test_enabled_terms_parsing(self):
        """Names are trimmed and lower-cased."""
        assert enabled_terms(['CL', ' recon ', '']) == {'cl', 'recon'}

    def test_total_is_sum_of_enabled_terms(self):
        """Disabled terms are zero and the total adds the rest."""
        cloud, pert = sample()
        out = dual_forward(seg_model(), cloud, pert)
        breakdown = total_loss(out, cloud, LossConfig.preset('segmentation'))
        row = breakdown.as_row()
        assert row['cg'] == 0.0 and row['cl2g'] == 0.0
        assert row['total'] == pytest.approx(row['cl'] + row['recon'] + row['normal'])
        assert row['cl'] > 0 and row['recon'] > 0

    def test_perfect_reconstruction_only(self):
        """Only recon enabled with an exact reconstruction gives zero."""
        cloud, _ = sample()
        result = single_forward(seg_model(), cloud.points)
        result = replace(result, reconstruction=constant(cloud.points))
        outputs = BranchOutputs(basic=result, assistant=None)
        assert total_loss(outputs, cloud, LossConfig.preset('loss_b')).total.item() == 0.0

    def test_consistency_needs_two_branches(self):
        """Single-branch outputs cannot feed consistency terms."""
        cloud, _ = sample()
        outputs = BranchOutputs(basic=single_forward(seg_model(), cloud.points), assistant=None)
        with pytest.raises(InvalidSpecError):
            total_loss(outputs, cloud, LossConfig.preset('segmentation'))

    def test_normals_required(self):
        """The normal term needs ground-truth normals."""
        cloud, pert = sample()
        bare = replace(cloud, normals=None)
        out = dual_forward(seg_model(), bare, pert)
        with pytest.raises(InvalidSpecError):
            total_loss(out, bare, LossConfig.preset('segmentation'))

    def test_batch_loss_sums_samples(self):
        """The batch total adds per-sample totals."""
        model = seg_model()
        pairs = [sample(seed) for seed in range(2)]
        outputs = [dual_forward(model, c, p) for c, p in pairs]
        total, breakdowns = batch_loss(outputs, [c for c, _ in pairs], LossConfig.preset('seg_c', batch_size=2))
        assert len(breakdowns) == 2
        assert total.item() == pytest.approx(sum(b.total.item() for b in breakdowns))
        assert all(b.cl2g.item() > 0 for b in breakdowns)

    def test_batch_of_one_warns(self, warnings):
        """CL2G over one sample logs a warning and adds 0."""
        cloud, pert = sample()
        out = dual_forward(seg_model(), cloud, pert)
        _, breakdowns = batch_loss([out], [cloud], LossConfig.preset('seg_c'))
        assert breakdowns[0].cl2g.item() == pytest.approx(0.0, abs=1e-12)
        assert any('batch of one' in m for m in warnings)

    def test_batch_size_mismatch(self):
        """Every output needs its cloud."""
        cloud, pert = sample()
        out = dual_forward(seg_model(), cloud, pert)
        with pytest.raises(SizeMismatchError):
            batch_loss([out], [cloud, cloud], LossConfig())

    def test_assistant_terms_reach_shared_parameters(self):
        """Dual losses differentiate into the shared store."""
        model = seg_model()
        cloud, pert = sample()
        with Tape() as tape:
            out = dual_forward(model, cloud, pert, ForwardMode(training=True))
            loss = total_loss(out, cloud, LossConfig(enabled={'cl'})).total
        grads = backward(tape, loss, model.store)
        assert isinstance(loss, Tensor)
        assert np.abs(grads['encoder.level0.weight_mlp.layer0.w']).sum() > 0
