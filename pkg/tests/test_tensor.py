"""Autodiff core: analytic examples, independent oracles, finite-difference checks."""

import numpy as np
import pytest

from gsavatar import tensor as T
from gsavatar.errors import ConfigError, ContractError, DegenerateBatchError, ShapeError

from conftest import fd_gradcheck


class TestGrad:
    def test_sum_of_squares(self):
        x = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        y = T.sum_(T.square(x))
        (gx,) = T.grad(y, [x])
        np.testing.assert_allclose(gx.data, [2.0, 4.0, 6.0])

    def test_sum_gives_ones(self, rng):
        x = T.Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        (gx,) = T.grad(T.sum_(x), [x])
        np.testing.assert_array_equal(gx.data, np.ones((4, 5), np.float32))

    def test_nonscalar_output_rejected(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.grad(T.square(x), [x])

    def test_unreachable_input_gets_zeros(self):
        x = T.Tensor([1.0], requires_grad=True)
        z = T.Tensor([3.0], requires_grad=True)
        (gx, gz) = T.grad(T.sum_(T.square(x)), [x, z])
        np.testing.assert_array_equal(gz.data, [0.0])

    def test_mlp_matches_finite_differences(self, rng):
        w1 = rng.standard_normal((5, 6)).astype(np.float32) * 0.5
        b1 = rng.standard_normal(6).astype(np.float32) * 0.1
        w2 = rng.standard_normal((6, 6)).astype(np.float32) * 0.5
        b2 = rng.standard_normal(6).astype(np.float32) * 0.1
        w3 = rng.standard_normal((6, 1)).astype(np.float32) * 0.5
        x = rng.standard_normal((2, 5)).astype(np.float32)

        def f(x_, w1_, b1_, w2_, b2_, w3_):
            h1 = T.tanh(T.linear(x_, w1_, b1_))
            h2 = T.gelu(T.linear(h1, w2_, b2_))
            return T.linear(h2, w3_, None)

        fd_gradcheck(f, [x, w1, b1, w2, b2, w3], tol=1e-4)

    def test_grad_accumulates_on_reuse(self):
        x = T.Tensor([2.0], requires_grad=True)
        y = T.add(T.square(x), x)  # x^2 + x -> 2x + 1 = 5
        (gx,) = T.grad(T.sum_(y), [x])
        np.testing.assert_allclose(gx.data, [5.0])


class TestLinear:
    def test_identity_weights(self, rng):
        x = rng.standard_normal((4, 3)).astype(np.float32)
        y = T.linear(T.Tensor(x), T.Tensor(np.eye(3)), T.Tensor(np.zeros(3)))
        np.testing.assert_array_equal(y.data, x)

    def test_small_case(self):
        y = T.linear(T.Tensor([[1.0, 1.0]]), T.Tensor([[1.0], [1.0]]), T.Tensor([1.0]))
        np.testing.assert_array_equal(y.data, [[3.0]])

    def test_against_naive_matmul(self, rng):
        x = rng.standard_normal((5, 4)).astype(np.float32)
        w = rng.standard_normal((4, 6)).astype(np.float32)
        b = rng.standard_normal(6).astype(np.float32)
        want = np.empty((5, 6), np.float32)
        for i in range(5):
            for j in range(6):
                acc = np.float32(0.0)
                for k in range(4):
                    acc += x[i, k] * w[k, j]
                want[i, j] = acc + b[j]
        got = T.linear(T.Tensor(x), T.Tensor(w), T.Tensor(b)).data
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)

    def test_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            T.linear(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5))), None)


def conv2d_loops(x, w, stride, pad):
    """Direct six-loop convolution oracle."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo), np.float32)
    for ni in range(n):
        for oi in range(co):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += xp[ni, ci, yi * stride + ky, xi * stride + kx] * w[oi, ci, ky, kx]
                    out[ni, oi, yi, xi] = acc
    return out


class TestConv2d:
    def test_1x1_identity_channel_matrix(self, rng):
        x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
        w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
        y = T.conv2d(T.Tensor(x), T.Tensor(w))
        np.testing.assert_array_equal(y.data, x)

    def test_3x3_delta_kernel_identity(self, rng):
        x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3), np.float32)
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        y = T.conv2d(T.Tensor(x), T.Tensor(w), pad=1)
        np.testing.assert_allclose(y.data, x, atol=1e-6)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_against_loop_oracle(self, rng, stride, pad):
        x = rng.standard_normal((2, 3, 7, 6)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        got = T.conv2d(T.Tensor(x), T.Tensor(w), stride=stride, pad=pad).data
        want = conv2d_loops(x, w, stride, pad)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv2d(T.Tensor(np.zeros((1, 3, 4, 4))), T.Tensor(np.zeros((2, 4, 3, 3))))

    def test_gradients(self, rng):
        x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32) * 0.3
        fd_gradcheck(lambda a, b: T.conv2d(a, b, pad=1), [x, w], tol=1e-4)


class TestConvTranspose2d:
    def test_doubles_resolution(self, rng):
        x = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
        w = rng.standard_normal((3, 5, 4, 4)).astype(np.float32)
        y = T.conv_transpose2d(T.Tensor(x), T.Tensor(w))
        assert y.shape == (1, 5, 8, 8)

    def test_zero_input(self, rng):
        w = rng.standard_normal((2, 2, 4, 4)).astype(np.float32)
        y = T.conv_transpose2d(T.Tensor(np.zeros((1, 2, 3, 3), np.float32)), T.Tensor(w))
        np.testing.assert_array_equal(y.data, 0.0)

    def test_equals_conv2d_input_gradient(self, rng):
        # transpose duality: deconv forward == d/dx conv2d(x, k) applied to the upstream
        g = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)  # plays the conv output grad
        w = rng.standard_normal((3, 2, 4, 4)).astype(np.float32)  # conv kernel (Co=3, Ci=2)
        x = T.Tensor(rng.standard_normal((1, 2, 8, 8)).astype(np.float32), requires_grad=True)
        y = T._conv2d_raw(x, T.Tensor(w), stride=2, pad=1)
        loss = T.sum_(T.mul(y, T.Tensor(g)))
        (gx,) = T.grad(loss, [x])
        # same kernel viewed as (Cin=3, Cout=2) drives the transposed conv
        got = T.conv_transpose2d(T.Tensor(g), T.Tensor(w)).data
        np.testing.assert_allclose(got, gx.data, rtol=1e-5, atol=1e-5)

    def test_unsupported_config_rejected(self, rng):
        x = T.Tensor(np.zeros((1, 2, 4, 4), np.float32))
        w = T.Tensor(np.zeros((2, 2, 4, 4), np.float32))
        with pytest.raises(ConfigError):
            T.conv_transpose2d(x, w, stride=1)

    def test_gradients(self, rng):
        x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        w = rng.standard_normal((2, 2, 4, 4)).astype(np.float32) * 0.3
        fd_gradcheck(lambda a, b: T.conv_transpose2d(a, b), [x, w], tol=1e-4)


def attention_loops(q, k, v, heads):
    """Per-head loop oracle."""
    n, t, d = q.shape
    dh = d // heads
    out = np.zeros_like(q)
    for ni in range(n):
        for hi in range(heads):
            sl = slice(hi * dh, (hi + 1) * dh)
            qs, ks, vs = q[ni, :, sl], k[ni, :, sl], v[ni, :, sl]
            scores = qs @ ks.T / np.sqrt(dh)
            scores = scores - scores.max(axis=1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=1, keepdims=True)
            out[ni, :, sl] = w @ vs
    return out


class TestAttention:
    def test_single_token_passthrough(self, rng):
        q = rng.standard_normal((1, 1, 4)).astype(np.float32)
        v = rng.standard_normal((1, 1, 4)).astype(np.float32)
        wo = T.Tensor(np.eye(4, dtype=np.float32))
        bo = T.Tensor(np.zeros(4, np.float32))
        y = T.attention(T.Tensor(q), T.Tensor(q), T.Tensor(v), heads=2, wo=wo, bo=bo)
        np.testing.assert_allclose(y.data, v, atol=1e-6)

    def test_uniform_queries_give_uniform_weights(self, rng):
        t = 5
        q = np.ones((1, t, 4), np.float32)
        k = np.ones((1, t, 4), np.float32)
        v = rng.standard_normal((1, t, 4)).astype(np.float32)
        y = T.attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), heads=1)
        np.testing.assert_allclose(y.data, np.broadcast_to(v.mean(axis=1, keepdims=True), v.shape), atol=1e-6)

    def test_against_loop_oracle(self, rng):
        q = rng.standard_normal((2, 6, 8)).astype(np.float32)
        k = rng.standard_normal((2, 6, 8)).astype(np.float32)
        v = rng.standard_normal((2, 6, 8)).astype(np.float32)
        got = T.attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), heads=4).data
        want = attention_loops(q, k, v, 4)
        err = np.abs(got - want).max() / max(np.abs(want).max(), 1e-6)
        assert err < 1e-5

    def test_indivisible_heads_rejected(self, rng):
        x = T.Tensor(np.zeros((1, 2, 6), np.float32))
        with pytest.raises(ConfigError):
            T.attention(x, x, x, heads=4)

    def test_gradients(self, rng):
        q = rng.standard_normal((1, 3, 4)).astype(np.float32)
        k = rng.standard_normal((1, 3, 4)).astype(np.float32)
        v = rng.standard_normal((1, 3, 4)).astype(np.float32)
        fd_gradcheck(
            lambda a, b, c: T.attention(a, b, c, heads=2),
            [q, k, v],
            tol=1e-4,
            fn64=lambda a, b, c: attention_loops(a, b, c, 2),
        )


class TestNormalize:
    def test_constant_input_returns_shift(self):
        x = T.Tensor(np.full((3, 8), 2.5, np.float32))
        gamma = T.Tensor(np.full(8, 1.7, np.float32))
        beta = T.Tensor(np.full(8, 0.3, np.float32))
        y = T.layer_norm(x, gamma, beta)
        assert np.abs(y.data - 0.3).max() < 1e-3

    def test_normalized_input_is_fixed_point(self, rng):
        x = rng.standard_normal((4, 16)).astype(np.float32)
        x = (x - x.mean(axis=1, keepdims=True)) / x.std(axis=1, keepdims=True)
        y = T.layer_norm(T.Tensor(x), T.Tensor(np.ones(16)), T.Tensor(np.zeros(16)))
        np.testing.assert_allclose(y.data, x, atol=1e-3)

    def test_batch_norm_statistics(self, rng):
        x = rng.standard_normal((8, 4, 6, 6)).astype(np.float32) * 3 + 1
        rm, rv = np.zeros(4, np.float32), np.ones(4, np.float32)
        y = T.batch_norm(T.Tensor(x), T.Tensor(np.ones(4)), T.Tensor(np.zeros(4)), rm, rv, training=True)
        mu = y.data.mean(axis=(0, 2, 3))
        var = y.data.var(axis=(0, 2, 3))
        assert np.abs(mu).max() < 1e-5
        assert np.abs(var - 1).max() < 1e-4

    def test_batch_norm_running_stats_used_in_eval(self, rng):
        x = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
        rm, rv = np.zeros(2, np.float32), np.ones(2, np.float32)
        g, b = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
        for _ in range(60):
            T.batch_norm(T.Tensor(x), g, b, rm, rv, training=True)
        y = T.batch_norm(T.Tensor(x), g, b, rm, rv, training=False)
        want = (x - rm.reshape(1, 2, 1, 1)) / np.sqrt(rv.reshape(1, 2, 1, 1) + 1e-5)
        np.testing.assert_allclose(y.data, want, atol=1e-5)

    def test_degenerate_batch_rejected(self):
        x = T.Tensor(np.zeros((1, 3), np.float32))
        rm, rv = np.zeros(3, np.float32), np.ones(3, np.float32)
        with pytest.raises(DegenerateBatchError):
            T.batch_norm(x, T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), rm, rv, training=True)

    def test_layer_norm_gradients(self, rng):
        x = rng.standard_normal((2, 5)).astype(np.float32)
        g = rng.standard_normal(5).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        fd_gradcheck(lambda a, c, d: T.layer_norm(a, c, d), [x, g, b], tol=1e-4)

    def test_batch_norm_gradients(self, rng):
        x = rng.standard_normal((3, 2, 2, 2)).astype(np.float32)
        g = rng.standard_normal(2).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)

        def f(a, c, d):
            rm, rv = np.zeros(2, np.float32), np.ones(2, np.float32)
            return T.batch_norm(a, c, d, rm, rv, training=True)

        def f64(a, c, d):
            mu = a.mean(axis=(0, 2, 3), keepdims=True)
            var = a.var(axis=(0, 2, 3), keepdims=True)
            xhat = (a - mu) / np.sqrt(var + 1e-5)
            return xhat * c.reshape(1, -1, 1, 1) + d.reshape(1, -1, 1, 1)

        fd_gradcheck(f, [x, g, b], tol=1e-4, fn64=f64)


class TestActivations:
    def test_reference_values(self):
        assert abs(T.leaky_relu(T.Tensor([-1.0])).data[0] + 0.01) < 1e-7
        assert abs(T.sigmoid(T.Tensor([0.0])).data[0] - 0.5) < 1e-7
        assert abs(T.softplus(T.Tensor([0.0])).data[0] - np.log(2)) < 1e-6
        assert abs(T.tanh(T.Tensor([0.0])).data[0]) < 1e-7

    def test_dispatch_and_unknown(self):
        x = T.Tensor([0.5])
        for kind in ("leaky_relu", "sigmoid", "softplus", "tanh", "gelu"):
            T.activation(x, kind)
        with pytest.raises(ConfigError):
            T.activation(x, "swish")

    @pytest.mark.parametrize("op", [T.sigmoid, T.softplus, T.tanh, T.gelu, T.exp, T.square])
    def test_elementwise_gradients(self, rng, op):
        x = rng.standard_normal(20).astype(np.float32)
        fd_gradcheck(op, [x], tol=1e-4)

    def test_leaky_relu_gradient(self, rng):
        # keep inputs away from the kink at 0 where FD is invalid
        x = rng.standard_normal(20).astype(np.float32)
        x[np.abs(x) < 0.05] = 0.5
        fd_gradcheck(T.leaky_relu, [x], tol=1e-4)


class TestGridSample:
    def test_texel_center_exact(self, rng):
        fm = rng.standard_normal((3, 4, 6)).astype(np.float32)
        # center of texel (row 2, col 3): x = 2*(3+.5)/6-1, y = 2*(2+.5)/4-1
        coords = np.array([[2 * 3.5 / 6 - 1, 2 * 2.5 / 4 - 1]], np.float32)
        out = T.grid_sample_bilinear(T.Tensor(fm), T.Tensor(coords))
        np.testing.assert_allclose(out.data[0], fm[:, 2, 3], atol=1e-6)

    def test_midpoint_is_mean(self, rng):
        fm = rng.standard_normal((2, 3, 5)).astype(np.float32)
        coords = np.array([[2 * 2.0 / 5 - 1, 2 * 1.5 / 3 - 1]], np.float32)  # between cols 1,2 at row 1
        out = T.grid_sample_bilinear(T.Tensor(fm), T.Tensor(coords))
        want = 0.5 * (fm[:, 1, 1] + fm[:, 1, 2])
        np.testing.assert_allclose(out.data[0], want, atol=1e-6)

    def test_against_direct_oracle(self, rng):
        fm = rng.standard_normal((4, 7, 9)).astype(np.float32)
        coords = (rng.random((50, 2)).astype(np.float32) * 2 - 1) * 1.2  # includes out-of-range
        got = T.grid_sample_bilinear(T.Tensor(fm), T.Tensor(coords)).data
        c, h, w = fm.shape
        want = np.zeros((50, c), np.float32)
        for i, (x, y) in enumerate(coords):
            qx = np.clip((x + 1) * 0.5 * w - 0.5, 0, w - 1)
            qy = np.clip((y + 1) * 0.5 * h - 0.5, 0, h - 1)
            x0, y0 = min(int(np.floor(qx)), w - 2), min(int(np.floor(qy)), h - 2)
            fx, fy = qx - x0, qy - y0
            want[i] = (
                fm[:, y0, x0] * (1 - fx) * (1 - fy)
                + fm[:, y0, x0 + 1] * fx * (1 - fy)
                + fm[:, y0 + 1, x0] * (1 - fx) * fy
                + fm[:, y0 + 1, x0 + 1] * fx * fy
            )
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)

    def test_gradients(self, rng):
        fm = rng.standard_normal((2, 5, 5)).astype(np.float32)
        coords = (rng.random((8, 2)).astype(np.float32) * 1.4 - 0.7)
        fd_gradcheck(lambda m, c: T.grid_sample_bilinear(m, c), [fm, coords], tol=1e-4)


class TestShapeOpsAndRules:
    def test_no_silent_broadcast(self, rng):
        a = T.Tensor(np.zeros((3, 4)))
        b = T.Tensor(np.zeros((4, 3)))
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(4, 3\)"):
            T.add(a, b)
        with pytest.raises(ShapeError):
            T.mul(a, T.Tensor(np.zeros((3, 1))))

    def test_bias_and_scalar_broadcast_allowed(self, rng):
        a = rng.standard_normal((2, 3, 4)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        y = T.add(T.Tensor(a), T.Tensor(b))
        np.testing.assert_allclose(y.data, a + b, atol=1e-6)
        y2 = T.mul(T.Tensor(a), 2.0)
        np.testing.assert_allclose(y2.data, a * 2, atol=1e-6)

    def test_bias_broadcast_gradients(self, rng):
        a = rng.standard_normal((2, 3)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        fd_gradcheck(lambda x, y: T.square(T.add(x, y)), [a, b], tol=1e-4)

    def test_reshape_transpose_concat_take_grads(self, rng):
        a = rng.standard_normal((3, 4)).astype(np.float32)
        b = rng.standard_normal((3, 2)).astype(np.float32)

        def f(x, y):
            return T.concat([T.transpose(x, (1, 0)).reshape(4, 3)[:2], T.transpose(y, (1, 0))], axis=0)

        fd_gradcheck(f, [a, b], tol=1e-4)

    def test_gather_scatter_grads(self, rng):
        a = rng.standard_normal((5, 3)).astype(np.float32)
        idx = np.array([0, 2, 2, 4])

        def f(x):
            g = T.gather_rows(x, idx)
            return T.scatter_rows(g, np.array([1, 3, 5, 7]), 9)

        fd_gradcheck(f, [a], tol=1e-4)

    def test_softmax_grads(self, rng):
        a = rng.standard_normal((3, 5)).astype(np.float32)
        fd_gradcheck(T.softmax, [a], tol=1e-4)

    def test_minimum_maximum_clamp_grads(self):
        x = T.Tensor([-2.0, 0.5, 3.0], requires_grad=True)
        y = T.sum_(T.minimum(T.maximum(x, 0.0), 1.0))
        (g,) = T.grad(y, [x])
        np.testing.assert_array_equal(g.data, [0.0, 1.0, 0.0])

    def test_determinism(self, rng):
        x = rng.standard_normal((4, 4)).astype(np.float32)
        w = rng.standard_normal((4, 4)).astype(np.float32)

        def run():
            return T.attention(T.Tensor(x[None]), T.Tensor(x[None]), T.Tensor(w[None]), heads=2).data.tobytes()

        assert run() == run()

    def test_debug_mode_catches_nonfinite(self):
        T.set_debug(True)
        try:
            with pytest.raises(FloatingPointError):
                T.log(T.Tensor([-1.0]))
        finally:
            T.set_debug(False)

    def test_matmul_batched_grads(self, rng):
        a = rng.standard_normal((2, 3, 4)).astype(np.float32)
        b = rng.standard_normal((2, 4, 2)).astype(np.float32)
        fd_gradcheck(T.matmul, [a, b], tol=1e-4)
