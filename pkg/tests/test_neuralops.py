"""Operator forward semantics and finite-difference gradient checks."""

import numpy as np
import pytest

from smokewatch.neuralops import ops
from smokewatch.neuralops.params import DivergenceError, ParameterSet, sgd_step

from gradcheck import numeric_grad, nudge_from_knots, relative_error

GRAD_TOL = 1e-4


def random_conv_instance(rng):
    B = int(rng.integers(1, 3))
    C = int(rng.integers(1, 4))
    outC = int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    padding = int(rng.integers(0, 2)) if k > 1 else 0
    H = int(rng.integers(k, k + 5))
    W = int(rng.integers(k, k + 5))
    x = rng.normal(size=(B, C, H, W))
    w = rng.normal(size=(outC, C, k, k))
    b = rng.normal(size=outC)
    return x, w, b, stride, padding


class TestConv2d:
    def test_identity_1x1(self):
        x = np.random.default_rng(0).normal(size=(2, 1, 5, 5)).astype(np.float32)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        y, _ = ops.conv2d_forward(x, w, np.zeros(1, dtype=np.float32))
        np.testing.assert_array_equal(y, x)

    def test_box_sum_oracle(self):
        # 3x3 all-ones kernel over a one-hot input lights up a 3x3 block
        x = np.zeros((1, 1, 7, 7), dtype=np.float64)
        x[0, 0, 3, 4] = 1.0
        w = np.ones((1, 1, 3, 3), dtype=np.float64)
        y, _ = ops.conv2d_forward(x, w, None, stride=1, padding=1)

        expected = np.zeros((7, 7))
        for i in range(7):
            for j in range(7):
                expected[i, j] = x[0, 0, max(0, i - 1) : i + 2, max(0, j - 1) : j + 2].sum()
        np.testing.assert_allclose(y[0, 0], expected, atol=1e-12)

    def test_output_shape(self):
        x = np.zeros((1, 2, 9, 11))
        w = np.zeros((3, 2, 3, 3))
        y, _ = ops.conv2d_forward(x, w, None, stride=2, padding=1)
        assert y.shape == (1, 3, 5, 6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            ops.conv2d_forward(np.zeros((1, 3, 4, 4)), np.zeros((2, 2, 3, 3)), None)

    def test_gradients(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            x, w, b, stride, padding = random_conv_instance(rng)
            proj = None

            def loss():
                y, _ = ops.conv2d_forward(x, w, b, stride, padding)
                nonlocal proj
                if proj is None:
                    proj = rng.normal(size=y.shape)
                return float(np.sum(y * proj))

            loss()  # fix the projection
            y, ctx = ops.conv2d_forward(x, w, b, stride, padding)
            gx, gw, gb = ops.conv2d_backward(ctx, proj)
            assert relative_error(gx, numeric_grad(loss, x)) <= GRAD_TOL
            assert relative_error(gw, numeric_grad(loss, w)) <= GRAD_TOL
            assert relative_error(gb, numeric_grad(loss, b)) <= GRAD_TOL


class TestDeformableConv2d:
    def test_zero_offsets_match_conv(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            x, w, b, _, _ = random_conv_instance(rng)
            k = w.shape[2]
            x32 = x.astype(np.float32)
            w32 = w.astype(np.float32)
            b32 = b.astype(np.float32)
            pad = k // 2
            ref, _ = ops.conv2d_forward(x32, w32, b32, stride=1, padding=pad)
            offsets = np.zeros((x.shape[0], 2 * k * k, ref.shape[2], ref.shape[3]), np.float32)
            y, _ = ops.deformable_conv2d_forward(x32, w32, offsets, b32)
            np.testing.assert_allclose(y, ref, atol=1e-6)

    def test_integer_offset_shifts_input(self):
        # a (+1, 0) x-offset on every tap reads the input shifted one column
        # left; the conv-of-shifted oracle only disagrees at output column 0,
        # where its zero padding replaces pixels the deformable taps still see
        rng = np.random.default_rng(9)
        x = rng.normal(size=(1, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        offsets = np.zeros((1, 18, 6, 6))
        offsets[:, 0::2] = 1.0  # dx = 1 for every tap
        y, _ = ops.deformable_conv2d_forward(x, w, offsets, None)

        shifted = np.zeros_like(x)
        shifted[:, :, :, :-1] = x[:, :, :, 1:]
        ref, _ = ops.conv2d_forward(shifted, w, None, stride=1, padding=1)
        np.testing.assert_allclose(y[:, :, :, 1:], ref[:, :, :, 1:], atol=1e-10)

    def test_offset_channel_mismatch_raises(self):
        with pytest.raises(ValueError):
            ops.deformable_conv2d_forward(
                np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), np.zeros((1, 4, 4, 4))
            )

    def test_gradients(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            B = int(rng.integers(1, 3))
            C = int(rng.integers(1, 3))
            outC = int(rng.integers(1, 3))
            k = 3
            H = int(rng.integers(5, 8))
            W = int(rng.integers(5, 8))
            x = rng.normal(size=(B, C, H, W))
            w = rng.normal(size=(outC, C, k, k))
            b = rng.normal(size=outC)
            offsets = nudge_from_knots(rng.uniform(-1.5, 1.5, size=(B, 2 * k * k, H, W)))
            proj = rng.normal(size=(B, outC, H, W))

            def loss():
                y, _ = ops.deformable_conv2d_forward(x, w, offsets, b)
                return float(np.sum(y * proj))

            y, ctx = ops.deformable_conv2d_forward(x, w, offsets, b)
            gx, gw, gb, goff = ops.deformable_conv2d_backward(ctx, proj)
            assert relative_error(gx, numeric_grad(loss, x)) <= GRAD_TOL
            assert relative_error(gw, numeric_grad(loss, w)) <= GRAD_TOL
            assert relative_error(gb, numeric_grad(loss, b)) <= GRAD_TOL
            assert relative_error(goff, numeric_grad(loss, offsets)) <= GRAD_TOL


class TestBilinearUpsample:
    def test_factor_one_identity(self):
        x = np.random.default_rng(1).normal(size=(1, 2, 3, 3))
        y, _ = ops.bilinear_upsample_forward(x, 1)
        np.testing.assert_array_equal(y, x)

    def test_constant_preserved(self):
        x = np.full((1, 1, 3, 4), 2.5)
        y, _ = ops.bilinear_upsample_forward(x, 4)
        assert y.shape == (1, 1, 12, 16)
        np.testing.assert_allclose(y, 2.5, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            factor = int(rng.choice([2, 3, 4]))
            x = rng.normal(size=(1, int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5))))
            proj_shape = (x.shape[0], x.shape[1], x.shape[2] * factor, x.shape[3] * factor)
            proj = rng.normal(size=proj_shape)

            def loss():
                y, _ = ops.bilinear_upsample_forward(x, factor)
                return float(np.sum(y * proj))

            y, ctx = ops.bilinear_upsample_forward(x, factor)
            gx = ops.bilinear_upsample_backward(ctx, proj)
            assert relative_error(gx, numeric_grad(loss, x)) <= GRAD_TOL


class TestPointwise:
    def test_relu_values(self):
        y, _ = ops.pointwise_forward(np.array([-1.0, 0.0, 2.0]), "relu")
        np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        y, _ = ops.pointwise_forward(np.array([0.0]), "sigmoid")
        assert y[0] == pytest.approx(0.5)

    def test_sigmoid_extreme_is_stable(self):
        y, _ = ops.pointwise_forward(np.array([-1000.0, 1000.0]), "sigmoid")
        assert np.all(np.isfinite(y))
        assert y[0] == pytest.approx(0.0, abs=1e-12) and y[1] == pytest.approx(1.0, abs=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ops.pointwise_forward(np.zeros(3), "tanh")

    @pytest.mark.parametrize("kind", ["relu", "sigmoid"])
    def test_gradients(self, kind):
        rng = np.random.default_rng(21)
        for _ in range(20):
            x = rng.normal(size=(2, int(rng.integers(1, 3)), 4, 4))
            if kind == "relu":  # keep away from the kink at zero
                x = np.where(np.abs(x) < 0.05, x + 0.1, x)
            proj = rng.normal(size=x.shape)

            def loss():
                y, _ = ops.pointwise_forward(x, kind)
                return float(np.sum(y * proj))

            y, ctx = ops.pointwise_forward(x, kind)
            gx = ops.pointwise_backward(ctx, proj)
            assert relative_error(gx, numeric_grad(loss, x)) <= GRAD_TOL


class TestSgd:
    def test_plain_step(self):
        ps = ParameterSet()
        p = ps.add("w", np.array([1.0]))
        p.grad[:] = 2.0
        sgd_step(ps, lr=0.1, momentum=0.0)
        assert p.value[0] == pytest.approx(0.8)
        assert p.grad[0] == 0.0

    def test_zero_gradient_keeps_parameters(self):
        ps = ParameterSet()
        p = ps.add("w", np.array([1.5, -2.0]))
        sgd_step(ps, lr=0.5, momentum=0.9)
        np.testing.assert_array_equal(p.value, [1.5, -2.0])

    def test_momentum_matches_recurrence(self):
        # hand-unrolled: v1 = g1; p1 = p0 - lr*v1; v2 = m*v1 + g2; p2 = p1 - lr*v2
        ps = ParameterSet()
        p = ps.add("w", np.array([1.0]))
        lr, m = 0.1, 0.9
        g1, g2 = 2.0, -1.0
        p.grad[:] = g1
        sgd_step(ps, lr=lr, momentum=m)
        p.grad[:] = g2
        sgd_step(ps, lr=lr, momentum=m)
        v1 = g1
        p1 = 1.0 - lr * v1
        v2 = m * v1 + g2
        p2 = p1 - lr * v2
        assert p.value[0] == pytest.approx(p2, abs=1e-12)

    def test_nonfinite_gradient_names_parameter(self):
        ps = ParameterSet()
        ps.add("fine", np.zeros(2))
        bad = ps.add("exploded", np.zeros(2))
        bad.grad[0] = np.nan
        with pytest.raises(DivergenceError, match="exploded"):
            sgd_step(ps, lr=0.1)


class TestDeterminism:
    def test_operators_are_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
        w = rng.normal(size=(2, 2, 3, 3)).astype(np.float32)
        off = rng.uniform(-1, 1, size=(1, 18, 6, 6)).astype(np.float32)
        a1, _ = ops.deformable_conv2d_forward(x, w, off)
        a2, _ = ops.deformable_conv2d_forward(x.copy(), w.copy(), off.copy())
        np.testing.assert_array_equal(a1, a2)
        b1, _ = ops.conv2d_forward(x, w, None, 1, 1)
        b2, _ = ops.conv2d_forward(x.copy(), w.copy(), None, 1, 1)
        np.testing.assert_array_equal(b1, b2)
