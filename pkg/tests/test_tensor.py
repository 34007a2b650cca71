"""Tensor core tests: brute-force oracles for conv/matmul, bit-exactness of
plumbing ops, and finite-difference gradient checks for every op."""

import numpy as np
import pytest

from bpcc import tensor as T


def conv2d_oracle(x, w, b, stride, padding, dilation):
    """Direct nested-loop dilated convolution, float64 accumulation."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=np.float64)
    for bn in range(n):
        for o in range(co):
            for p in range(ho):
                for q in range(wo):
                    acc = float(b[o])
                    for i in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                hi = p * stride - padding + u * dilation
                                wi = q * stride - padding + v * dilation
                                if 0 <= hi < h and 0 <= wi < wd:
                                    acc += float(x[bn, i, hi, wi]) * float(w[o, i, u, v])
                    out[bn, o, p, q] = acc
    return out


def matmul_oracle(a, b):
    r, k = a.shape
    k2, c = b.shape
    out = np.zeros((r, c), dtype=np.float64)
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for m in range(k):
                acc += float(a[i, m]) * float(b[m, j])
            out[i, j] = acc
    return out


def rel_err(got, want):
    return np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want)))


class TestConv2d:
    def test_identity_kernel(self):
        x = T.Tensor(np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3))
        w = T.Tensor(np.ones((1, 1, 1, 1), np.float32))
        b = T.Tensor(np.zeros(1, np.float32))
        y = T.conv2d(x, w, b, stride=1, padding=0, dilation=1)
        np.testing.assert_array_equal(y.data, x.data)

    def test_dilated_preserves_decoder_resolution(self):
        x = T.Tensor(np.random.default_rng(0).standard_normal((1, 1, 8, 8)), dtype=np.float32)
        w = T.Tensor(np.random.default_rng(1).standard_normal((1, 1, 3, 3)), dtype=np.float32)
        b = T.Tensor(np.zeros(1, np.float32))
        y = T.conv2d(x, w, b, stride=1, padding=2, dilation=2)
        assert y.shape == (1, 1, 8, 8)

    def test_matches_direct_sum_oracle(self):
        rng = np.random.default_rng(7)
        x = T.Tensor(rng.standard_normal((1, 2, 5, 5)), dtype=np.float32)
        w = T.Tensor(rng.standard_normal((3, 2, 3, 3)), dtype=np.float32)
        b = T.Tensor(rng.standard_normal(3), dtype=np.float32)
        y = T.conv2d(x, w, b, stride=1, padding=1, dilation=1)
        want = conv2d_oracle(x.data, w.data, b.data, 1, 1, 1)
        assert rel_err(y.data, want) < 1e-5

    @pytest.mark.parametrize("seed", range(8))
    def test_random_small_shapes_vs_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, ci, co = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        h, wd = rng.integers(3, 7), rng.integers(3, 7)
        kh = kw = int(rng.choice([1, 3]))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 3))
        dilation = int(rng.choice([1, 2]))
        while min(h, wd) + 2 * padding - dilation * (kh - 1) - 1 < 0:
            padding += 1
        x = T.Tensor(rng.standard_normal((n, ci, h, wd)), dtype=np.float32)
        w = T.Tensor(rng.standard_normal((co, ci, kh, kw)), dtype=np.float32)
        b = T.Tensor(rng.standard_normal(co), dtype=np.float32)
        y = T.conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation)
        want = conv2d_oracle(x.data, w.data, b.data, stride, padding, dilation)
        assert rel_err(y.data, want) < 1e-5

    def test_channel_mismatch_raises(self):
        x = T.Tensor(np.zeros((1, 2, 4, 4), np.float32))
        w = T.Tensor(np.zeros((1, 3, 3, 3), np.float32))
        b = T.Tensor(np.zeros(1, np.float32))
        with pytest.raises(ValueError, match="channel mismatch"):
            T.conv2d(x, w, b)

    def test_nonpositive_output_raises(self):
        x = T.Tensor(np.zeros((1, 1, 2, 2), np.float32))
        w = T.Tensor(np.zeros((1, 1, 3, 3), np.float32))
        b = T.Tensor(np.zeros(1, np.float32))
        with pytest.raises(ValueError, match="output dims"):
            T.conv2d(x, w, b, stride=1, padding=0, dilation=1)


class TestPointwise:
    def test_relu(self):
        y = T.relu(T.Tensor(np.array([-1.0, 0.0, 2.0], np.float32)))
        np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])

    def test_concat_channel_counts(self):
        a = T.Tensor(np.zeros((1, 64, 4, 4), np.float32))
        b = T.Tensor(np.zeros((1, 64, 4, 4), np.float32))
        assert T.concat_channels([a, b]).shape == (1, 128, 4, 4)

    def test_concat_slice_roundtrip_bitexact(self):
        rng = np.random.default_rng(3)
        parts = [T.Tensor(rng.standard_normal((2, c, 3, 5)), dtype=np.float32) for c in (1, 3, 2)]
        cat = T.concat_channels(parts)
        lo = 0
        for p in parts:
            hi = lo + p.shape[1]
            np.testing.assert_array_equal(T.slice_channels(cat, lo, hi).data, p.data)
            lo = hi

    def test_concat_backward_routes_one_hot(self):
        rng = np.random.default_rng(4)
        a = T.Tensor(rng.standard_normal((1, 2, 2, 2)), dtype=np.float32)
        b = T.Tensor(rng.standard_normal((1, 3, 2, 2)), dtype=np.float32)
        with T.Tape() as tape:
            cat = T.concat_channels([a, b])
            seed = np.zeros(cat.shape, np.float32)
            seed[0, 3, 1, 0] = 1.0  # lands in b's channel 1
            tape.backward(cat, seed=seed)
        assert a.grad is None or not a.grad.any()
        want = np.zeros(b.shape, np.float32)
        want[0, 1, 1, 0] = 1.0
        np.testing.assert_array_equal(b.grad, want)

    def test_scale_add_gamma_zero_is_identity(self):
        rng = np.random.default_rng(5)
        x = T.Tensor(rng.standard_normal((1, 2, 3, 3)), dtype=np.float32)
        y = T.Tensor(rng.standard_normal((1, 2, 3, 3)), dtype=np.float32)
        out = T.scale_add(x, y, 0.0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            T.add(T.Tensor(np.zeros(3, np.float32)), T.Tensor(np.zeros(4, np.float32)))

    def test_nonfinite_raises(self):
        x = T.Tensor(np.array([3e38], np.float32))
        with pytest.raises(T.NonFiniteError):
            T.add(x, x)


class TestMatmulSoftmax:
    def test_softmax_equal_row(self):
        s = T.softmax_rows(T.Tensor(np.full((1, 4), 3.0, np.float32)))
        np.testing.assert_allclose(s.data, 0.25)

    def test_matmul_vs_oracle(self):
        rng = np.random.default_rng(11)
        a = T.Tensor(rng.standard_normal((2, 3)), dtype=np.float32)
        b = T.Tensor(rng.standard_normal((3, 2)), dtype=np.float32)
        got = T.matmul(a, b)
        assert rel_err(got.data, matmul_oracle(a.data, b.data)) < 1e-5

    def test_softmax_large_values_no_overflow(self):
        s = T.softmax_rows(T.Tensor(np.array([[1000.0, 0.0]], np.float32)))
        assert s.data[0, 0] == pytest.approx(1.0)
        assert s.data[0, 1] == pytest.approx(0.0, abs=1e-6)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(12)
        s = T.softmax_rows(T.Tensor(rng.standard_normal((6, 9)), dtype=np.float32))
        np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-6)

    def test_matmul_dim_mismatch(self):
        with pytest.raises(ValueError):
            T.matmul(T.Tensor(np.zeros((2, 3), np.float32)), T.Tensor(np.zeros((2, 3), np.float32)))


class TestUpsample:
    def test_constant_stays_constant(self):
        x = T.Tensor(np.full((1, 2, 3, 3), 3.5, np.float32))
        y = T.bilinear_upsample(x, 8)
        assert y.shape == (1, 2, 24, 24)
        np.testing.assert_allclose(y.data, 3.5, atol=1e-6)

    def test_shape_x8(self):
        x = T.Tensor(np.zeros((1, 64, 72, 72), np.float32))
        assert T.bilinear_upsample(x, 8).shape == (1, 64, 576, 576)

    def test_ramp_matches_half_pixel_oracle(self):
        x = T.Tensor(np.array([0.0, 1.0], np.float32).reshape(1, 1, 1, 2))
        y = T.bilinear_upsample(x, 2)
        # closed-form half-pixel interpolation of the 2-sample ramp; the unit
        # height axis upsamples to two identical rows
        assert y.shape == (1, 1, 2, 4)
        np.testing.assert_allclose(y.data[0, 0, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-7)
        np.testing.assert_allclose(y.data[0, 0, 1], [0.0, 0.25, 0.75, 1.0], atol=1e-7)

    def test_factor_below_one_raises(self):
        with pytest.raises(ValueError):
            T.bilinear_upsample(T.Tensor(np.zeros((1, 1, 2, 2), np.float32)), 0)


class TestGradients:
    def test_add_gradient_error_is_rounding_level(self):
        rng = np.random.default_rng(0)
        x = T.Tensor(rng.standard_normal((3, 4)))
        y = T.Tensor(rng.standard_normal((3, 4)))
        assert T.gradient_check(T.add, [x, y]) < 1e-9

    def test_conv2d_gradient(self):
        rng = np.random.default_rng(1)
        x = T.Tensor(rng.standard_normal((1, 2, 4, 4)))
        w = T.Tensor(rng.standard_normal((2, 2, 3, 3)))
        b = T.Tensor(rng.standard_normal(2))
        err = T.gradient_check(lambda a, c, d: T.conv2d(a, c, d, 1, 1, 1), [x, w, b])
        assert err < 1e-5

    @pytest.mark.parametrize("seed", range(5))
    def test_all_ops_float64(self, seed):
        rng = np.random.default_rng(seed)

        def t(*shape):
            # keep values away from relu kinks
            d = rng.standard_normal(shape)
            return T.Tensor(np.where(np.abs(d) < 0.05, 0.3, d))

        checks = [
            (T.relu, [t(2, 3)]),
            (T.add, [t(4,), t(4,)]),
            (T.sub, [t(4,), t(4,)]),
            (lambda x, y, g: T.scale_add(x, y, g), [t(2, 2, 2, 2), t(2, 2, 2, 2), t()]),
            (lambda *xs: T.concat_channels(list(xs)), [t(1, 2, 3, 3), t(1, 1, 3, 3)]),
            (lambda x: T.slice_channels(x, 1, 3), [t(1, 4, 2, 2)]),
            (T.matmul, [t(3, 4), t(4, 2)]),
            (T.softmax_rows, [t(3, 5)]),
            (T.transpose2d, [t(3, 4)]),
            (lambda x: T.reshape(x, (6,)), [t(2, 3)]),
            (lambda x: T.bilinear_upsample(x, 2), [t(1, 2, 3, 4)]),
            (lambda x: T.bilinear_upsample(x, 3), [t(1, 1, 2, 2)]),
            (T.mse, [t(3, 3), t(3, 3)]),
            (lambda x, w, b: T.conv2d(x, w, b, 1, 2, 2), [t(1, 2, 5, 5), t(2, 2, 3, 3), t(2,)]),
            (lambda x, w, b: T.conv2d(x, w, b, 2, 1, 1), [t(1, 2, 5, 5), t(2, 2, 3, 3), t(2,)]),
        ]
        for fn, inputs in checks:
            assert T.gradient_check(fn, inputs, seed=seed) < 1e-5

    @pytest.mark.parametrize("seed", range(5))
    def test_ops_float32_loose(self, seed):
        rng = np.random.default_rng(100 + seed)

        def t(*shape):
            d = rng.standard_normal(shape).astype(np.float32)
            return T.Tensor(np.where(np.abs(d) < 0.05, np.float32(0.3), d))

        checks = [
            (T.relu, [t(3, 3)]),
            (lambda x, w, b: T.conv2d(x, w, b, 1, 1, 1), [t(1, 2, 4, 4), t(2, 2, 3, 3), t(2,)]),
            (T.matmul, [t(3, 3), t(3, 3)]),
            (T.softmax_rows, [t(2, 4)]),
        ]
        for fn, inputs in checks:
            assert T.gradient_check(fn, inputs, seed=seed) < 1e-3

    def test_reuse_accumulates_once_per_use(self):
        # y = x + x must give dy/dx = 2 exactly
        x = T.Tensor(np.ones((2, 2)))
        with T.Tape() as tape:
            y = T.add(x, x)
            tape.backward(y)
        np.testing.assert_array_equal(x.grad, 2 * np.ones((2, 2)))


class TestTapeAndParam:
    def test_param_zero_grad(self):
        p = T.Param("w", np.ones(3, np.float32))
        p.value.accumulate_grad(np.ones(3, np.float32))
        assert p.grad.sum() == 3.0
        p.zero_grad()
        np.testing.assert_array_equal(p.grad, np.zeros(3))

    def test_no_tape_records_nothing(self):
        x = T.Tensor(np.ones(3, np.float32))
        y = T.relu(x)
        assert y.grad is None and x.grad is None

    def test_nested_tape_rejected(self):
        with T.Tape():
            with pytest.raises(RuntimeError):
                with T.Tape():
                    pass
