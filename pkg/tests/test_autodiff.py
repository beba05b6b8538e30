"""
Tests for the tape, the differentiable ops, Adam, parameter containers and gradient checking.
"""

import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from src.autodiff import AdamHyper, ParamStore, Tape, Tensor, adam_step, backward, constant, grad_check, ops, set_debug
from src.autodiff.params import MAGIC
from src.system.errors import (
    CloudIOError, InvalidSpecError, MisalignedError, NonFiniteError, NonScalarLossError,
    ShapeMismatchError, UsageError, VersionMismatchError
)


def small_store(seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.declare('w', rng.normal(size=(3, 4)))
    store.declare('b', rng.normal(size=(4,)))
    return store


def mlp_loss(x: np.ndarray):
    def f(store: ParamStore) -> Tensor:
        h = ops.tanh(ops.add(ops.matmul(constant(x), store['w']), store['b']))
        return ops.mean(ops.mul(h, h))
    return f


class TestTape:
    """Tests for recording and the reverse pass."""

    def test_square_sum_gradient(self):
        """d/dx sum(x * x) = 2x."""
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        assert np.allclose(backward(tape, loss).of(x), [2.0, 4.0, 6.0])

    def test_backward_is_repeatable(self):
        """The tape is not consumed by a reverse pass."""
        x = Tensor([1.0, -2.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.tanh(x))
        first = backward(tape, loss).of(x)
        second = backward(tape, loss).of(x)
        assert np.array_equal(first, second)

    def test_parameter_shared_by_two_tapes(self):
        """Using a parameter on a second tape keeps its gradient on the first."""
        w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as first:
            loss_first = ops.sum(ops.mul(w, w))
        with Tape() as second:
            loss_second = ops.sum(ops.scale(w, 5.0))
        assert np.allclose(backward(first, loss_first).of(w), [2.0, 4.0, 6.0])
        assert np.allclose(backward(second, loss_second).of(w), [5.0, 5.0, 5.0])

    def test_tapes_on_threads(self):
        """Tapes recorded concurrently on separate threads stay independent."""
        w = Tensor([1.0, -2.0, 0.5], requires_grad=True)

        def gradient(factor: float) -> np.ndarray:
            with Tape() as tape:
                loss = ops.sum(ops.scale(ops.mul(w, w), factor))
            return backward(tape, loss).of(w)

        factors = [float(f) for f in range(1, 9)]
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(gradient, factors))
        for factor, grad in zip(factors, results):
            assert np.allclose(grad, 2.0 * factor * w.data)

    def test_no_tape_records_nothing(self):
        """Ops outside a tape only compute values."""
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            pass
        y = ops.scale(x, 3.0)
        assert len(tape) == 0
        assert y.item() == 3.0

    def test_constants_are_not_recorded(self):
        """Inputs without requires_grad leave the tape empty."""
        with Tape() as tape:
            ops.add(constant([1.0]), constant([2.0]))
        assert len(tape) == 0

    def test_unreachable_parameters_get_zeros(self):
        """Store-aligned gradients cover every parameter."""
        store = small_store()
        with Tape() as tape:
            loss = ops.sum(store['b'])
        grads = backward(tape, loss, store)
        assert set(grads) == {'w', 'b'}
        assert np.array_equal(grads['w'], np.zeros((3, 4)))
        assert np.array_equal(grads['b'], np.ones(4))

    def test_non_scalar_loss(self):
        """Only scalars can be differentiated."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.scale(x, 2.0)
        with pytest.raises(NonScalarLossError):
            backward(tape, y)

    def test_debug_mode_catches_nan(self):
        """log of a negative number fails under debug checks."""
        set_debug(True)
        try:
            with pytest.raises(NonFiniteError):
                ops.log(Tensor([-1.0], requires_grad=True))
        finally:
            set_debug(False)


class TestOps:
    """Forward values and gradients of the primitives."""

    def test_broadcast_gradients_sum_back(self):
        """A broadcast bias collects gradients over rows."""
        a = Tensor(np.ones((5, 2)), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.add(a, b))
        assert np.array_equal(backward(tape, loss).of(b), [5.0, 5.0])

    def test_shape_mismatch(self):
        """Non-broadcastable operands are rejected."""
        with pytest.raises(ShapeMismatchError):
            ops.add(constant(np.ones((2, 3))), constant(np.ones((4,))))
        with pytest.raises(ShapeMismatchError):
            ops.matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))

    def test_take_accumulates_repeated_rows(self):
        """Gathering the same row twice doubles its gradient."""
        a = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.gather_rows(a, [0, 0, 2]))
        assert np.array_equal(backward(tape, loss).of(a), [[2, 2], [0, 0], [1, 1]])

    def test_max_pool_routes_to_argmax(self):
        """Ties go to the lowest index."""
        a = Tensor([[1.0, 5.0], [3.0, 5.0]], requires_grad=True)
        with Tape() as tape:
            values, idx = ops.max_pool(a, axis=0)
            loss = ops.sum(values)
        assert values.data.tolist() == [3.0, 5.0]
        assert idx.tolist() == [1, 0]
        assert np.array_equal(backward(tape, loss).of(a), [[0, 1], [1, 0]])

    def test_logsumexp_is_overflow_safe(self):
        """Large logits stay finite."""
        out = ops.logsumexp(constant([1000.0, 1000.0]))
        assert out.item() == pytest.approx(1000.0 + np.log(2.0))

    def test_log_softmax_rows_normalize(self):
        """exp(log_softmax) sums to one per row."""
        out = ops.softmax(constant([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]), axis=1)
        assert np.allclose(out.data.sum(axis=1), 1.0)

    def test_norm_of_zero_has_zero_gradient(self):
        """The zero vector gives a zero gradient, not NaN."""
        a = Tensor(np.zeros((1, 3)), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.norm(a, axis=1))
        assert np.array_equal(backward(tape, loss).of(a), np.zeros((1, 3)))

    def test_cosine_similarity_of_parallel_rows(self):
        """Parallel rows have similarity one."""
        sim = ops.cosine_similarity(constant([[1.0, 0.0], [0.0, 2.0]]), constant([[3.0, 0.0]]))
        assert np.allclose(sim.data, [[1.0], [0.0]])

    def test_batch_norm_updates_running_stats(self):
        """Training mode blends batch statistics into the buffers."""
        x = constant([[1.0], [3.0]])
        running_mean, running_var = np.zeros(1), np.ones(1)
        out = ops.batch_norm(x, constant([1.0]), constant([0.0]), running_mean, running_var,
                             training=True, momentum=0.1)
        assert np.allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-4)
        assert running_mean[0] == pytest.approx(0.2)
        assert running_var[0] == pytest.approx(0.9 + 0.1 * 2.0)

    def test_batch_norm_inference_is_fixed(self):
        """Inference mode uses the running statistics only."""
        out = ops.batch_norm(constant([[2.0]]), constant([1.0]), constant([0.0]), np.array([1.0]),
                             np.array([4.0]), training=False, eps=0.0)
        assert out.item() == pytest.approx(0.5)

    @pytest.mark.parametrize('build', [
        lambda w: ops.sum(ops.relu(w)),
        lambda w: ops.sum(ops.exp(ops.scale(w, 0.3))),
        lambda w: ops.sum(ops.l2_normalize(w, axis=1)),
        lambda w: ops.sum(ops.log_softmax(w, axis=1)[:, 0]),
        lambda w: ops.sum(ops.logsumexp(w, axis=0)),
        lambda w: ops.sum(ops.norm(ops.transpose(w), axis=1)),
        lambda w: ops.sum(ops.reshape(ops.concat([w, w], axis=0), (-1,))),
        lambda w: ops.mean(ops.broadcast_to(ops.sum(w, axis=0, keepdims=True), (4, 3))),
        lambda w: ops.sum(ops.cosine_similarity(w, w)),
        lambda w: ops.sum(ops.mul(
            ops.batch_norm(w, constant(np.ones(3)), constant(np.zeros(3)), np.zeros(3), np.ones(3), training=True),
            constant(np.arange(12.0).reshape(4, 3)))),
    ])
    def test_gradients_match_finite_differences(self, build):
        """Every op agrees with central differences."""
        store = ParamStore()
        store.declare('w', np.random.default_rng(2).normal(size=(4, 3)))
        report = grad_check(lambda s: build(s['w']), store)
        assert report.passed(1e-5)


class TestAdam:
    """Tests for the optimizer."""

    def test_first_step_moves_by_lr(self):
        """The bias-corrected first step is about lr against the gradient."""
        store = ParamStore()
        store.declare('x', np.array([1.0]))
        adam_step(store, {'x': np.array([2.0])}, AdamHyper(lr=0.001))
        assert store['x'].data[0] - 1.0 == pytest.approx(-0.001, rel=1e-5)
        assert store.adam['x'].t == 1

    def test_lr_override(self):
        """Scheduled learning rates replace the default."""
        store = ParamStore()
        store.declare('x', np.array([1.0]))
        adam_step(store, {'x': np.array([-3.0])}, AdamHyper(), lr=0.01)
        assert store['x'].data[0] == pytest.approx(1.01, rel=1e-6)

    def test_misaligned_gradients(self):
        """Gradient names and shapes must match the store."""
        store = small_store()
        with pytest.raises(MisalignedError):
            adam_step(store, {'w': np.zeros((3, 4))}, AdamHyper())
        with pytest.raises(MisalignedError):
            adam_step(store, {'w': np.zeros((3, 4)), 'b': np.zeros(3)}, AdamHyper())

    def test_bad_hyper(self):
        """lr must be positive and betas in (0, 1)."""
        with pytest.raises(InvalidSpecError):
            AdamHyper(lr=0.0)
        with pytest.raises(InvalidSpecError):
            AdamHyper(beta1=1.0)

    def test_training_reduces_loss(self):
        """A few Adam steps reduce a smooth loss."""
        store = small_store()
        f = mlp_loss(np.random.default_rng(1).normal(size=(8, 3)))
        start = f(store).item()
        for _ in range(20):
            with Tape() as tape:
                loss = f(store)
            adam_step(store, backward(tape, loss, store), AdamHyper(lr=0.01))
        assert f(store).item() < start


class TestParamStore:
    """Tests for parameters, buffers and the binary container."""

    def test_duplicate_declaration(self):
        """A name is declared once."""
        store = small_store()
        with pytest.raises(UsageError):
            store.declare('w', np.zeros(1))

    def test_assign_keeps_shape(self):
        """Assignments cannot reshape a parameter."""
        store = small_store()
        with pytest.raises(ShapeMismatchError):
            store.assign('b', np.zeros(3))

    def test_container_keeps_everything(self, tmp_path):
        """Parameters, buffers, moments and metadata survive save/load."""
        store = small_store()
        store.buffer('bn.mean', lambda: np.arange(4.0))
        adam_step(store, {'w': np.ones((3, 4)), 'b': np.ones(4)}, AdamHyper())
        path = store.save(tmp_path / 'p.bin', meta={'epoch': 3})

        loaded, meta = ParamStore.load(path)
        assert meta == {'epoch': 3}
        assert loaded.names() == store.names()
        for name in store.names():
            assert np.array_equal(loaded[name].data, store[name].data)
            assert np.array_equal(loaded.adam[name].m, store.adam[name].m)
            assert loaded.adam[name].t == 1
        assert np.array_equal(loaded.get_buffer('bn.mean'), np.arange(4.0))

    def test_container_is_deterministic(self):
        """Equal stores serialize to equal bytes."""
        assert small_store().to_bytes({'a': 1}) == small_store().to_bytes({'a': 1})

    def test_bad_magic(self):
        """Foreign files are rejected."""
        with pytest.raises(CloudIOError):
            ParamStore.from_bytes(b'NOTCPNET' + bytes(16))

    def test_version_mismatch(self):
        """Other container versions are rejected."""
        blob = bytearray(small_store().to_bytes())
        blob[8:12] = struct.pack('<I', 99)
        assert blob[:8] == MAGIC
        with pytest.raises(VersionMismatchError):
            ParamStore.from_bytes(bytes(blob))

    def test_copy_is_independent(self):
        """Copies share no arrays with the original."""
        store = small_store()
        clone = store.copy()
        clone['w'].data[0, 0] += 1.0
        assert clone['w'].data[0, 0] != store['w'].data[0, 0]


class TestGradCheck:
    """Tests for finite-difference verification."""

    def test_mlp_passes(self):
        """A small tanh network has matching gradients."""
        report = grad_check(mlp_loss(np.random.default_rng(0).normal(size=(5, 3))), small_store())
        assert report.checked + report.skipped == 16
        assert report.checked > 0
        assert report.passed(1e-5)

    def test_sampled_coordinates_cover_every_parameter(self):
        """Sampling checks at least one coordinate per parameter."""
        report = grad_check(mlp_loss(np.ones((2, 3))), small_store(), sample=5, seed=3)
        assert report.checked + report.skipped == 5

    def test_store_restored(self):
        """Perturbed coordinates are put back."""
        store = small_store()
        before = store.snapshot()
        grad_check(mlp_loss(np.ones((2, 3))), store)
        for name, value in before.items():
            assert np.array_equal(store[name].data, value)

    def test_wrong_gradient_fails(self):
        """A broken backward rule is detected."""
        from src.autodiff.tensor import as_tensor, make_result

        def bad_square(a):
            a = as_tensor(a)
            return make_result(a.data ** 2, (a,), lambda g: (g * a.data,), 'bad_square')

        store = small_store()
        report = grad_check(lambda s: ops.sum(bad_square(s['b'])), store)
        assert not report.passed(1e-4)
