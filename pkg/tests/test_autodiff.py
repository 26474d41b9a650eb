import numpy as np
import pytest

from leapocc.autodiff import (
    ConditionalBatchNorm,
    F,
    Linear,
    ParameterStore,
    Tape,
    Value,
    adam_step,
    backward,
)
from leapocc.autodiff.gradcheck import numerical_grad, rel_error, tape_grads


def _check(fn, leaves, tol, h=1e-5):
    analytic = tape_grads(fn, leaves)
    for leaf, a in zip(leaves, analytic):
        n = numerical_grad(lambda: fn().item(), leaf.data, h=h)
        err = rel_error(a, n, floor=1e-8)
        assert err.max() < tol, (leaf.name, err.max())


def _leaf(rng, *shape, name=None):
    return Value(rng.normal(size=shape), requires_grad=True, name=name)


def _weighted(out, w):
    return F.sum(F.mul(out, w))


class TestLinear:
    def test_identity(self):
        y = F.linear(np.array([3.0, 4.0]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(y.data, [3.0, 4.0])

    def test_row_sum(self):
        y = F.linear(np.array([2.0, 3.0]), np.array([[1.0, 1.0]]), np.array([1.0]))
        np.testing.assert_array_equal(y.data, [6.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            F.linear(np.ones(3), np.ones((2, 2)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        W, b, x = _leaf(rng, 4, 3), _leaf(rng, 4), _leaf(rng, 5, 3)
        w = rng.normal(size=(5, 4))
        _check(lambda: _weighted(F.linear(x, W, b), w), [W, b, x], 1e-6)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(F.softmax(np.zeros(3)).data, np.full(3, 1 / 3), atol=1e-15)

    def test_no_overflow(self):
        out = F.softmax(np.array([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0)
        assert out[1] < 1e-300 or out[1] == pytest.approx(0.0, abs=1e-300)

    @pytest.mark.parametrize("seed", range(5))
    def test_jacobian(self, seed):
        rng = np.random.default_rng(seed)
        x = _leaf(rng, 6)
        for k in range(6):
            onehot = np.eye(6)[k]
            _check(lambda: _weighted(F.softmax(x), onehot), [x], 1e-6)

    def test_simplex_interior(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            out = F.softmax(rng.normal(scale=5, size=8)).data
            assert np.all(out > 0)
            assert abs(out.sum() - 1) < 1e-12


class TestBackward:
    def test_non_scalar_root(self):
        x = Value(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ValueError):
            backward(tape, y)

    def test_constant_root(self):
        store = ParameterStore()
        p = store.add("p", np.ones(3))
        with Tape() as tape:
            root = Value(5.0)
        backward(tape, root)
        np.testing.assert_array_equal(p.grad_or_zeros(), 0.0)

    def test_sum_of_squares(self):
        x = Value(np.array([1.0, -2.0, 3.5]), requires_grad=True)
        with Tape() as tape:
            root = F.sum(F.square(x))
        backward(tape, root)
        np.testing.assert_array_equal(x.grad, 2 * x.data)

    def test_replay_once(self):
        x = Value(np.ones(2), requires_grad=True)
        with Tape() as tape:
            root = F.sum(x)
        backward(tape, root)
        with pytest.raises(RuntimeError):
            backward(tape, root)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        W, x = _leaf(rng, 8, 5), _leaf(rng, 16, 5)
        fn = lambda: F.sum(F.square(F.relu(F.linear(x, W))))  # noqa: E731
        g1 = tape_grads(fn, [W, x])
        g2 = tape_grads(fn, [W, x])
        for a, b in zip(g1, g2):
            assert np.array_equal(a, b)


PRIMITIVES = {
    "add": (lambda a, b: F.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: F.sub(a, b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: F.mul(a, b), [(3, 4), (1, 4)]),
    "div": (lambda a, b: F.div(a, F.add(F.square(b), 1.0)), [(3, 4), (3, 4)]),
    "exp": (lambda a: F.exp(a), [(5,)]),
    "log": (lambda a: F.log(F.add(F.square(a), 0.5)), [(5,)]),
    "sqrt": (lambda a: F.sqrt(F.add(F.square(a), 0.5)), [(5,)]),
    "sigmoid": (lambda a: F.sigmoid(a), [(2, 3)]),
    "relu": (lambda a: F.relu(a), [(2, 3)]),
    "abs": (lambda a: F.abs(a), [(7,)]),
    "sin_cos": (lambda a: F.mul(F.sin(a), F.cos(a)), [(4,)]),
    "max": (lambda a: F.max(a, axis=1), [(3, 5)]),
    "mean": (lambda a: F.mean(a, axis=0), [(4, 3)]),
    "concat": (lambda a, b: F.concat([a, b], axis=-1), [(2, 3), (2, 2)]),
    "stack": (lambda a, b: F.stack([a, b], axis=1), [(2, 3), (2, 3)]),
    "getitem": (lambda a: a[1:, [0, 2]], [(3, 4)]),
    "transpose": (lambda a: F.transpose(a, (1, 0, 2)), [(2, 3, 4)]),
    "matmul": (lambda a, b: F.matmul(a, b), [(2, 3, 4), (4, 2)]),
    "einsum": (lambda a, b: F.einsum("eki,kij->ekj", a, b), [(2, 3, 4), (3, 4, 5)]),
    "einsum_reduce": (lambda a, b: F.einsum("ij,k->k", a, b), [(2, 3), (4,)]),
    "solve": (lambda a, b: F.solve(F.add(a, 3.0 * np.eye(3)), b), [(4, 3, 3), (4, 3)]),
    "batch_norm": (lambda a: F.batch_norm(a)[0], [(6, 3)]),
    "clip": (lambda a: F.clip(a, -0.5, 0.5), [(9,)]),
    "softmax": (lambda a: F.softmax(a, axis=0), [(4, 2)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    """Analytic vs central differences, 100 random instances in total per primitive."""
    op, shapes = PRIMITIVES[name]
    failures = 0
    for seed in range(100 // 5):
        rng = np.random.default_rng(seed)
        leaves = [_leaf(rng, *s) for s in shapes]
        out_shape = op(*leaves).shape
        w = rng.normal(size=out_shape)
        fn = lambda: _weighted(op(*leaves), w)  # noqa: E731
        analytic = tape_grads(fn, leaves)
        for leaf, a in zip(leaves, analytic):
            n = numerical_grad(lambda: fn().item(), leaf.data)
            if rel_error(a, n, floor=1e-8).max() >= 1e-5:
                failures += 1
    # kinks (relu/abs/max/clip) can straddle the FD stencil; allow none for smooth ops
    assert failures == 0


class TestCBN:
    def _cbn(self, seed=0, F_=4, C=3):
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        return store, ConditionalBatchNorm(store, "cbn", F_, C, rng)

    def test_identity_on_standardised_input(self):
        rng = np.random.default_rng(1)
        store, cbn = self._cbn()
        x = rng.normal(size=(32, 4))
        x = (x - x.mean(0)) / x.std(0)
        out = cbn(x, np.ones(3), training=True)
        assert np.abs(out.data - x).max() < 1e-6

    def test_constant_column(self):
        rng = np.random.default_rng(2)
        store, cbn = self._cbn()
        x = rng.normal(size=(16, 4))
        x[:, 2] = 7.0
        out = cbn(x, np.zeros(3), training=True)
        np.testing.assert_allclose(out.data[:, 2], 0.0, atol=1e-12)

    def test_batch_of_one_rejected(self):
        store, cbn = self._cbn()
        with pytest.raises(ValueError):
            cbn(np.ones((1, 4)), np.zeros(3), training=True)

    def test_running_stats(self):
        rng = np.random.default_rng(4)
        store, cbn = self._cbn()
        x = rng.normal(loc=2.0, size=(64, 4))
        cbn(x, np.zeros(3), training=True)
        np.testing.assert_allclose(cbn.running_mean, 0.1 * x.mean(0))
        np.testing.assert_allclose(cbn.running_var, 0.9 + 0.1 * x.var(0))
        # eval mode uses the running statistics
        out = cbn(x, np.zeros(3), training=False).data
        expect = (x - cbn.running_mean) / np.sqrt(cbn.running_var)
        np.testing.assert_allclose(out, expect)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        store, cbn = self._cbn(seed)
        for v in store.params.values():
            v.data[...] = rng.normal(size=v.shape)
        x = _leaf(rng, 2, 5, 4, name="x")
        cond = _leaf(rng, 2, 1, 3, name="cond")
        w = rng.normal(size=(2, 5, 4))

        def fn():
            saved = cbn.running_mean.copy(), cbn.running_var.copy()
            out = _weighted(cbn(x, cond, training=True), w)
            cbn.running_mean[...], cbn.running_var[...] = saved
            return out

        _check(fn, [x, cond] + list(store.params.values()), 1e-5)


class TestAdam:
    def test_zero_grad_no_move(self):
        store = ParameterStore()
        p = store.add("p", np.array([1.0, 2.0]))
        adam_step(store, lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        assert store.adam_t["p"] == 1

    def test_first_step(self):
        store = ParameterStore()
        p = store.add("p", np.array([1.0]))
        p.grad = np.array([1.0])
        adam_step(store, lr=0.1)
        assert p.data[0] == pytest.approx(0.9, abs=1e-9)
        assert p.grad is None

    def test_quadratic_bowl(self):
        store = ParameterStore()
        p = store.add("p", np.array([1.0]))
        for _ in range(200):
            with Tape() as tape:
                loss = F.sum(F.square(p))
            backward(tape, loss)
            adam_step(store, lr=0.1)
        assert abs(p.data[0]) < 1e-2

    def test_nan_names_parameter(self):
        store = ParameterStore()
        p = store.add("encoder.w", np.zeros(2))
        p.grad = np.array([np.nan, 0.0])
        with pytest.raises(FloatingPointError, match="encoder.w"):
            adam_step(store, lr=0.1)

    def test_frozen_untouched(self):
        store = ParameterStore()
        p = store.add("lbs.w", np.ones(2))
        store.set_trainable("lbs.", False)
        p.grad = np.ones(2)
        adam_step(store, lr=0.1)
        np.testing.assert_array_equal(p.data, 1.0)


def test_linear_layer_params():
    store = ParameterStore()
    Linear(store, "fc", 19, 19, np.random.default_rng(0))
    Linear(store, "out", 19, 6, np.random.default_rng(0))
    assert store.count() == 500
