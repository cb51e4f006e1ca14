"""
LDSeg - Numerics Tests
Tensor arithmetic, layers against dense references, random streams and the
parameter store / optimizer.
"""

import math

import numpy as np
import pytest
from scipy import stats

from src.errors import CheckpointError, DimensionError, GraphNotRecordedError, NonFiniteError, RangeError
from src.numerics import (
    ParamStore,
    RngStream,
    Tensor,
    attention2d,
    backward,
    concat,
    conv2d,
    group_norm,
    layer_norm,
    linear,
    no_grad,
    precision,
    sgd_adam_step,
    time_embedding,
    upsample_nearest,
)


def reference_conv(x, w, b, stride=1):
    """Direct nested-loop cross-correlation with k//2 zero padding."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((n, cout, ho, wo))
    for a in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    for c in range(cin):
                        for u in range(k):
                            for v in range(k):
                                out[a, o, i, j] += xp[a, c, i * stride + u, j * stride + v] * w[o, c, u, v]
            out[a, o] += b[o]
    return out


def reference_attention(x, weights, heads):
    """Dense per-head softmax attention with residual."""
    wq, bq, wk, bk, wv, bv, wo, bo = weights
    n, c, h, w = x.shape
    d = c // heads
    tokens = x.reshape(n, c, h * w).transpose(0, 2, 1)
    q, k, v = tokens @ wq.T + bq, tokens @ wk.T + bk, tokens @ wv.T + bv
    out = np.zeros_like(tokens)
    for a in range(n):
        for head in range(heads):
            sl = slice(head * d, (head + 1) * d)
            scores = q[a][:, sl] @ k[a][:, sl].T / math.sqrt(d)
            scores = np.exp(scores - scores.max(axis=1, keepdims=True))
            scores /= scores.sum(axis=1, keepdims=True)
            out[a][:, sl] = scores @ v[a][:, sl]
    projected = out @ wo.T + bo
    return x + projected.transpose(0, 2, 1).reshape(n, c, h, w)


class TestTensor:
    """Test recorded arithmetic and backward()."""

    def test_default_precision_is_float32(self):
        """Test that new tensors are 32-bit unless precision() says otherwise."""
        assert Tensor([1.0, 2.0]).data.dtype == np.float32
        with precision(np.float64):
            assert Tensor([1.0]).data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32

    def test_product_rule(self):
        """Test d(a*b + a)/da = b + 1 and d/db = a."""
        a = Tensor([2.0, 3.0], requires_grad=True)
        b = Tensor([5.0, 7.0], requires_grad=True)
        backward((a * b + a).sum())
        np.testing.assert_allclose(a.grad, [6.0, 8.0])
        np.testing.assert_allclose(b.grad, [2.0, 3.0])

    def test_broadcast_gradient_is_reduced(self):
        """Test that a broadcast operand receives the summed gradient."""
        x = Tensor(np.ones((3, 4)), requires_grad=True)
        bias = Tensor(np.zeros(4), requires_grad=True)
        backward((x + bias).sum())
        np.testing.assert_allclose(bias.grad, np.full(4, 3.0))

    def test_matmul_shapes(self):
        """Test that matmul rejects mismatched inner dimensions."""
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))

    def test_backward_needs_scalar(self):
        """Test that backward() refuses a non-scalar loss."""
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            backward(x * 2.0)

    def test_backward_detached_loss(self):
        """Test that a loss with no recorded graph raises GraphNotRecordedError."""
        with pytest.raises(GraphNotRecordedError):
            backward(Tensor(np.ones(())) * 2.0)

    def test_no_grad_records_nothing(self):
        """Test that operations inside no_grad() do not require grad."""
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * 3.0).sum()
        assert not y.requires_grad
        with pytest.raises(GraphNotRecordedError):
            backward(y)

    def test_softmax_sums_to_one(self):
        """Test that softmax rows sum to one."""
        out = Tensor(np.random.default_rng(0).normal(size=(2, 5))).softmax(axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)

    def test_concat_splits_gradient(self):
        """Test that concat routes gradients back to each part."""
        a = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
        b = Tensor(np.ones((1, 3, 2, 2)), requires_grad=True)
        out = concat([a, b], axis=1)
        assert out.shape == (1, 5, 2, 2)
        backward((out * 2.0).sum())
        np.testing.assert_allclose(a.grad, 2.0)
        np.testing.assert_allclose(b.grad, 2.0)

    def test_item_needs_one_element(self):
        """Test item() on a multi-element tensor."""
        with pytest.raises(DimensionError):
            Tensor(np.ones(2)).item()

    def test_nan_result_raises(self):
        """Test that the log of a negative value is rejected instead of returning NaN."""
        with np.errstate(invalid="ignore"):
            with pytest.raises(NonFiniteError):
                Tensor(np.array([1.0, -1.0])).log()

    def test_inf_result_raises(self):
        """Test that division by zero is rejected."""
        with np.errstate(divide="ignore"):
            with pytest.raises(NonFiniteError):
                Tensor(np.ones(2)) / Tensor(np.array([1.0, 0.0]))

    def test_non_finite_gradient_raises(self):
        """Test that a finite loss with an infinite gradient stops backward()."""
        x = Tensor(np.array([0.0, 4.0]), requires_grad=True)
        loss = (x ** 0.5).sum()
        assert loss.item() == pytest.approx(2.0)
        with np.errstate(divide="ignore"):
            with pytest.raises(NonFiniteError):
                backward(loss)
        assert x.grad is None

    def test_no_grad_still_checks_values(self):
        """Test that inference mode also rejects non-finite results."""
        with no_grad(), np.errstate(divide="ignore"):
            with pytest.raises(NonFiniteError):
                Tensor(np.zeros(1)).log()


class TestLayers:
    """Test layers against dense references and their contracts."""

    def test_conv2d_matches_reference(self):
        """Test a 2x3x8x8 input with a 4x3x3x3 kernel against the nested-loop convolution."""
        g = np.random.default_rng(1)
        x, w, b = g.normal(size=(2, 3, 8, 8)), g.normal(size=(4, 3, 3, 3)), g.normal(size=4)
        with precision(np.float64):
            out = conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, reference_conv(x, w, b), atol=1e-5)

    def test_conv2d_stride_two(self):
        """Test that stride 2 halves the grid and matches the reference."""
        g = np.random.default_rng(2)
        x, w, b = g.normal(size=(1, 2, 8, 8)), g.normal(size=(3, 2, 3, 3)), g.normal(size=3)
        with precision(np.float64):
            out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2)
        assert out.shape == (1, 3, 4, 4)
        np.testing.assert_allclose(out.data, reference_conv(x, w, b, stride=2), atol=1e-5)

    def test_conv2d_channel_mismatch(self):
        """Test that mismatched input channels raise DimensionError."""
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_conv2d_even_kernel(self):
        """Test that even kernels are rejected."""
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))

    def test_group_norm_statistics(self):
        """Test per-sample, per-group mean 0 and variance 1."""
        x = np.random.default_rng(3).normal(loc=5.0, scale=3.0, size=(2, 4, 6, 6))
        with precision(np.float64):
            out = group_norm(Tensor(x), 2).data.reshape(2, 2, -1)
        np.testing.assert_allclose(out.mean(axis=2), 0.0, atol=1e-8)
        np.testing.assert_allclose(out.var(axis=2), 1.0, atol=1e-3)

    def test_layer_norm_constant_is_zero(self):
        """Test that a constant sample normalizes to all zeros."""
        out = layer_norm(Tensor(np.full((2, 5), 4.0)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_layer_norm_two_values(self):
        """Test [1, 3] -> [-1, 1] up to epsilon."""
        out = layer_norm(Tensor(np.array([[1.0, 3.0]])))
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)

    def test_layer_norm_row_moments(self):
        """Test per-row mean 0 and variance 1 on a random 4x16 input."""
        x = np.random.default_rng(5).normal(loc=-2.0, scale=4.0, size=(4, 16))
        with precision(np.float64):
            out = layer_norm(Tensor(x)).data
        assert np.abs(out.mean(axis=1)).max() < 1e-6
        assert np.abs(out.var(axis=1) - 1.0).max() < 1e-3

    def test_group_norm_divisibility(self):
        """Test that channels must divide into groups."""
        with pytest.raises(DimensionError):
            group_norm(Tensor(np.ones((1, 3, 2, 2))), 2)

    def test_attention_matches_dense_reference(self):
        """Test a 1x8x4x4 input against explicit softmax over the 16x16 score matrix."""
        g = np.random.default_rng(4)
        x = g.normal(size=(1, 8, 4, 4))
        weights = []
        for _ in range(4):
            weights += [g.normal(size=(8, 8)) * 0.3, g.normal(size=8) * 0.1]
        with precision(np.float64):
            out = attention2d(Tensor(x), *[Tensor(w) for w in weights], heads=2)
        np.testing.assert_allclose(out.data, reference_attention(x, weights, 2), atol=1e-5)

    def test_attention_heads_must_divide(self):
        """Test that heads must divide the channel count."""
        w, b = Tensor(np.eye(6)), Tensor(np.zeros(6))
        with pytest.raises(DimensionError):
            attention2d(Tensor(np.ones((1, 6, 2, 2))), w, b, w, b, w, b, w, b, heads=4)

    def test_linear(self):
        """Test x @ W^T + b."""
        out = linear(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 3.0]]), Tensor([0.5, -1.0]))
        np.testing.assert_allclose(out.data, [[1.5, 5.0]])

    def test_upsample_nearest(self):
        """Test that every pixel is repeated factor x factor times."""
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        out = upsample_nearest(x, 2).data[0, 0]
        np.testing.assert_array_equal(out[:2, :2], 0.0)
        np.testing.assert_array_equal(out[2:, 2:], 3.0)

    def test_time_embedding_distinguishes_steps(self):
        """Test that t=1 and t=2 embed to different vectors of the requested width."""
        e1, e2 = time_embedding(1, 128), time_embedding(2, 128)
        assert e1.shape == (128,)
        assert np.linalg.norm(e1.data - e2.data) > 0

    def test_time_embedding_batch(self):
        """Test a vector of timesteps gives one row each."""
        assert time_embedding(np.array([1, 5, 9]), 16).shape == (3, 16)

    def test_time_embedding_odd_dim(self):
        """Test that an odd width is rejected."""
        with pytest.raises(DimensionError):
            time_embedding(1, 7)

    def test_time_embedding_negative(self):
        """Test that negative timesteps are rejected."""
        with pytest.raises(RangeError):
            time_embedding(-1, 8)


class TestRngStream:
    """Test reproducible random streams."""

    def test_same_key_same_draws(self):
        """Test that (seed, stream) fully determines the draws."""
        a = RngStream(7, 2).normal((5,))
        b = RngStream(7, 2).normal((5,))
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        """Test that different streams and children draw differently."""
        base = RngStream(7, 0)
        assert not np.array_equal(base.child(1).normal((5,)), base.child(2).normal((5,)))
        assert not np.array_equal(RngStream(7, 0).normal((5,)), RngStream(7, 1).normal((5,)))

    def test_negative_seed(self):
        """Test that negative seeds are rejected."""
        with pytest.raises(RangeError):
            RngStream(-1)

    def test_normal_moments(self):
        """Test standard normal draws: mean, variance, skew and kurtosis near N(0, 1)."""
        draws = RngStream(0, 5).normal((20000,), dtype=np.float64)
        assert abs(draws.mean()) < 0.05
        assert abs(draws.var() - 1.0) < 0.05
        assert abs(stats.skew(draws)) < 0.1
        assert abs(stats.kurtosis(draws)) < 0.15

    def test_integers_uniform(self):
        """Test that integers() is uniform by a chi-square test at alpha = 0.001."""
        draws = RngStream(0, 6).integers(1, 11, size=100000)
        counts = np.bincount(draws, minlength=11)[1:]
        assert stats.chisquare(counts).pvalue > 0.001


class TestParamStore:
    """Test parameter registration, serialization and updates."""

    def test_state_dict_round_trip(self):
        """Test that loading a state dict restores values into the same objects."""
        store = ParamStore()
        store.conv("c", RngStream(0), 2, 1, 3)
        tensor = store["c.weight"]
        saved = store.state_dict()
        tensor.data = tensor.data + 1.0
        store.load_state_dict(saved)
        assert store["c.weight"] is tensor
        np.testing.assert_array_equal(tensor.data, saved["c.weight"])

    def test_strict_load_mismatch(self):
        """Test that missing parameters are a checkpoint error."""
        store = ParamStore()
        store.norm("n", 4)
        with pytest.raises(CheckpointError):
            store.load_state_dict({})

    def test_duplicate_name(self):
        """Test that a name can be registered only once."""
        store = ParamStore()
        store.add("w", np.zeros(2))
        with pytest.raises(KeyError):
            store.add("w", np.zeros(2))

    def test_adam_minimizes_quadratic(self):
        """Test that repeated updates drive (w - 3)^2 towards zero."""
        store = ParamStore()
        w = store.add("w", np.zeros(1))
        for _ in range(500):
            store.zero_grads()
            backward(((w - 3.0) * (w - 3.0)).sum(), store.tensors())
            sgd_adam_step(store, 0.1)
        assert abs(float(w.data[0]) - 3.0) < 0.1
        assert store.step_count == 500

    def test_adam_two_dimensional_quadratic(self):
        """Test that 200 updates bring (w0 - 1)^2 + 3 (w1 + 2)^2 within 1e-3 of its minimum."""
        store = ParamStore()
        with precision(np.float64):
            w = store.add("w", np.zeros(2))
            target, curvature = Tensor([1.0, -2.0]), Tensor([1.0, 3.0])
            for _ in range(200):
                store.zero_grads()
                backward((curvature * (w - target) * (w - target)).sum(), store.tensors())
                sgd_adam_step(store, 0.1)
        assert np.linalg.norm(w.data - np.array([1.0, -2.0])) < 1e-3

    def test_zero_gradient_leaves_parameters(self):
        """Test that an all-zero gradient does not move any parameter."""
        store = ParamStore()
        w = store.add("w", np.array([0.5, -1.5, 2.0]))
        before = w.data.copy()
        sgd_adam_step(store, 0.1)
        np.testing.assert_array_equal(w.data, before)
        assert store.step_count == 1

    def test_frozen_parameters_unchanged(self):
        """Test that frozen parameters keep their values and fingerprint."""
        store = ParamStore()
        w = store.add("w", np.ones(3))
        before = store.fingerprint()
        store.freeze()
        w.grad = np.ones(3, dtype=np.float32)
        sgd_adam_step(store, 0.1)
        assert store.fingerprint() == before

    def test_non_positive_learning_rate(self):
        """Test that lr <= 0 is rejected."""
        with pytest.raises(RangeError):
            sgd_adam_step(ParamStore(), 0.0)

    def test_moment_state_restores_step(self):
        """Test that optimizer moments and the step counter survive a reload."""
        store = ParamStore()
        w = store.add("w", np.ones(2))
        w.grad = np.ones(2, dtype=np.float32)
        sgd_adam_step(store, 0.01)
        other = ParamStore()
        other.add("w", np.ones(2))
        other.load_moment_state(store.moment_state(), store.step_count)
        assert other.step_count == 1
        np.testing.assert_array_equal(other.moments["w"][0], store.moments["w"][0])
