"""Gradient checks run in float64 so finite differences are meaningful."""

import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpa import nn
from mpa.errors import InvalidInput, ShapeError

H = 1e-6
TOL = 1e-3


def fd_check(fn, inputs, rng, n_probe=12):
    """Compare analytic gradients of sum(fn(*inputs) * w) with central differences."""
    with nn.precision(np.float64):
        tensors = [nn.parameter(x.copy()) for x in inputs]
        out = fn(*tensors)
        w = rng.normal(size=out.shape)
        nn.tsum(nn.mul(out, w)).backward()
        worst = 0.0
        for t, x in zip(tensors, inputs):
            for _ in range(n_probe):
                idx = tuple(int(rng.integers(s)) for s in x.shape)
                old = x[idx]
                x[idx] = old + H
                up = float(np.sum(fn(*[nn.Tensor(a) for a in inputs]).data * w))
                x[idx] = old - H
                down = float(np.sum(fn(*[nn.Tensor(a) for a in inputs]).data * w))
                x[idx] = old
                fd = (up - down) / (2 * H)
                an = t.grad[idx]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


OPS = {
    "add": (lambda a, b: nn.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: nn.sub(a, b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: nn.mul(a, b), [(2, 3, 4), (3, 4)]),
    "gelu": (lambda a: nn.gelu(a), [(5, 6)]),
    "matmul": (lambda a, b: nn.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "linear": (lambda x, w, b: nn.linear(x, w, b), [(3, 4), (4, 2), (2,)]),
    "conv1d": (lambda x, w, b: nn.conv1d(x, w, b, stride=2, padding=2), [(2, 9, 3), (5, 3, 4), (4,)]),
    "softmax": (lambda a: nn.softmax(a, axis=-1), [(3, 5)]),
    "log_softmax": (lambda a: nn.log_softmax(a, axis=-1), [(3, 5)]),
    "layer_norm": (lambda x, g, b: nn.layer_norm(x, g, b), [(3, 6), (6,), (6,)]),
    "reshape": (lambda a: nn.reshape(a, (6, 2)), [(3, 4)]),
    "transpose": (lambda a: nn.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    "getitem": (lambda a: nn.getitem(a, (slice(None), [0, 2, 2])), [(3, 4)]),
    "sum": (lambda a: nn.tsum(a, axis=1), [(3, 4)]),
    "mean": (lambda a: nn.mean(a, axis=0, keepdims=True), [(3, 4)]),
}


class TestGradients:
    @pytest.mark.parametrize("name", sorted(OPS))
    def test_op_matches_finite_differences(self, name):
        fn, shapes = OPS[name]
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        inputs = [rng.normal(size=s) for s in shapes]
        assert fd_check(fn, inputs, rng) < TOL

    def test_masked_softmax(self):
        rng = np.random.default_rng(0)
        mask = np.array([[True, True, False, True]])
        assert fd_check(lambda a: nn.softmax(a, mask=mask), [rng.normal(size=(3, 4))], rng) < TOL

    def test_embedding(self):
        rng = np.random.default_rng(1)
        ids = np.array([[1, 3, 1], [0, 2, 3]])
        assert fd_check(lambda t: nn.embedding(t, ids), [rng.normal(size=(4, 5))], rng) < TOL

    def test_dropout_uses_the_same_mask(self):
        rng = np.random.default_rng(2)
        assert fd_check(lambda a: nn.dropout(a, 0.3, (1, 2, 3)), [rng.normal(size=(4, 6))], rng) < TOL

    def test_cross_entropy(self):
        rng = np.random.default_rng(3)
        tgt = np.array([[1, 0, 2], [3, 3, 0]])
        sel = np.array([[True, False, True], [True, True, False]])
        fn = lambda z: nn.cross_entropy(z, tgt, sel)  # noqa: E731
        assert fd_check(fn, [rng.normal(size=(2, 3, 4))], rng) < TOL

    def test_mse_loss(self):
        rng = np.random.default_rng(4)
        target = rng.normal(size=(2, 5))
        sel = rng.random((2, 5)) < 0.6
        sel[0, 0] = True
        assert fd_check(lambda p: nn.mse_loss(p, target, sel), [rng.normal(size=(2, 5))], rng) < TOL

    def test_shared_input_accumulates(self):
        with nn.precision(np.float64):
            x = nn.parameter(np.array([1.0, 2.0]))
            nn.tsum(nn.mul(x, x) + x).backward()
        np.testing.assert_allclose(x.grad, [3.0, 5.0])

    def test_backward_needs_scalar(self):
        with pytest.raises(InvalidInput):
            nn.parameter(np.ones(3)).backward()


class TestOps:
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
                  elements=st.floats(-50, 50)))
    @settings(max_examples=50, deadline=None)
    def test_softmax_is_a_distribution(self, a):
        with nn.precision(np.float64):
            s = nn.softmax(nn.Tensor(a)).data
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_is_shift_invariant_and_stable(self):
        a = np.array([[1000.0, 1001.0, 1002.0]])
        with nn.precision(np.float64):
            s = nn.softmax(nn.Tensor(a)).data
            t = nn.softmax(nn.Tensor(a - 1000.0)).data
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, t, atol=1e-15)

    def test_layer_norm_of_constant_gives_bias(self):
        x = nn.Tensor(np.full((2, 8), 3.5))
        out = nn.layer_norm(x, nn.Tensor(np.full(8, 2.0)), nn.Tensor(np.full(8, 0.25)))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-6)

    def test_cross_entropy_uniform_is_log_vocab(self):
        loss = nn.cross_entropy(nn.Tensor(np.zeros((4, 7))), [0, 1, 2, 3])
        assert loss.item() == pytest.approx(math.log(7), rel=1e-6)

    def test_cross_entropy_scalar_oracle(self):
        z = np.array([2.0, -1.0, 0.5])
        want = -(z[2] - math.log(np.exp(z).sum()))
        with nn.precision(np.float64):
            got = nn.cross_entropy(nn.Tensor(z[None]), [2]).item()
        assert got == pytest.approx(want, abs=1e-12)

    def test_cross_entropy_empty_mask(self):
        with pytest.raises(InvalidInput):
            nn.cross_entropy(nn.Tensor(np.zeros((2, 3))), [0, 1], [False, False])

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            nn.matmul(nn.Tensor(np.ones((2, 3))), nn.Tensor(np.ones((4, 2))))

    def test_dropout_is_keyed(self):
        x = nn.Tensor(np.ones((50, 50)))
        a = nn.dropout(x, 0.5, (7, 1, 0)).data
        assert np.array_equal(a, nn.dropout(x, 0.5, (7, 1, 0)).data)
        assert not np.array_equal(a, nn.dropout(x, 0.5, (7, 1, 1)).data)
        assert not np.array_equal(a, nn.dropout(x, 0.5, (7, 2, 0)).data)
        assert nn.dropout(x, 0.5, (7, 1, 0), training=False) is x
        assert abs(a.mean() - 1.0) < 0.1

    def test_no_grad_builds_no_graph(self):
        p = nn.parameter(np.ones(3))
        with nn.no_grad():
            out = nn.mul(p, 2.0)
        assert not out.requires_grad


class TestOptimizer:
    def test_zero_gradient_leaves_params(self):
        p = {"w": np.array([1.0, -2.0])}
        nn.adam_step(p, {"w": np.zeros(2)}, nn.OptimizerState(lr=0.1))
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        # bias correction makes the first update exactly lr * sign(g) (up to eps)
        p = {"w": np.array([1.0, -2.0, 3.0])}
        nn.adam_step(p, {"w": np.array([0.5, -4.0, 1e-3])}, nn.OptimizerState(lr=0.01))
        np.testing.assert_allclose(p["w"], [0.99, -1.99, 2.99], atol=1e-5)

    def test_minimizes_quadratic(self):
        p = {"w": np.array([3.0, -5.0])}
        state = nn.OptimizerState(lr=0.1)
        for _ in range(2000):
            nn.adam_step(p, {"w": 2 * p["w"]}, state)
        assert np.abs(p["w"]).max() < 1e-2
        assert state.step == 2000

    def test_none_gradient_skipped(self):
        p = {"a": np.ones(2), "b": np.ones(2)}
        nn.adam_step(p, {"a": np.ones(2), "b": None}, nn.OptimizerState())
        np.testing.assert_array_equal(p["b"], 1.0)
        assert p["a"][0] < 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nn.adam_step({"a": np.ones(2)}, {"a": np.ones(3)}, nn.OptimizerState())

    def test_clip(self):
        g = [np.array([3.0, 0.0]), np.array([4.0])]
        norm = nn.clip_grad_norm(g, 1.0)
        assert norm == pytest.approx(5.0)
        assert nn.global_norm(g) == pytest.approx(1.0, abs=1e-6)
        small = [np.array([0.1])]
        nn.clip_grad_norm(small, 1.0)
        assert small[0][0] == 0.1

    def test_schedule(self):
        assert nn.inverse_sqrt_lr(50, 1e-3, 100) == pytest.approx(5e-4)
        assert nn.inverse_sqrt_lr(100, 1e-3, 100) == pytest.approx(1e-3)
        assert nn.inverse_sqrt_lr(400, 1e-3, 100) == pytest.approx(5e-4)
