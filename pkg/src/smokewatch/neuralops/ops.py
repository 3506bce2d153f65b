"""Differentiable numeric operators on (B, C, H, W) feature maps.

Each operator comes as a forward/backward pair: forward returns the output
plus a context tuple, backward takes that context and the output gradient and
returns exact analytic vector-Jacobian products for every input. Arrays are
float32 in the model; the same code paths run in float64 for gradient checks
since all arithmetic follows the input dtype.
"""

from __future__ import annotations

import numpy as np


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """Unfold x into (B, C*k*k, oh*ow) patch columns."""
    B, C, H, W = x.shape
    oh = _out_size(H, k, stride, padding)
    ow = _out_size(W, k, stride, padding)
    if oh < 1 or ow < 1:
        raise ValueError(f"kernel {k} with padding {padding} does not fit input {H}x{W}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((B, C, k, k, oh, ow), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[:, :, di : di + oh * stride : stride, dj : dj + ow * stride : stride]
    return cols.reshape(B, C * k * k, oh * ow), oh, ow


def _col2im(gcols: np.ndarray, x_shape, k: int, stride: int, padding: int, oh: int, ow: int):
    """Adjoint of _im2col: scatter patch-column gradients back onto the input."""
    B, C, H, W = x_shape
    gxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=gcols.dtype)
    g = gcols.reshape(B, C, k, k, oh, ow)
    for di in range(k):
        for dj in range(k):
            gxp[:, :, di : di + oh * stride : stride, dj : dj + ow * stride : stride] += g[:, :, di, dj]
    if padding == 0:
        return gxp
    return gxp[:, :, padding : padding + H, padding : padding + W]


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, padding: int = 0):
    """Cross-correlation with zero padding.

    Args:
        x: (B, inC, H, W) input.
        w: (outC, inC, k, k) weights.
        b: (outC,) bias or None.
    Returns:
        (y, ctx) with y of shape (B, outC, oh, ow).
    """
    outC, inC, k, k2 = w.shape
    if k != k2:
        raise ValueError(f"only square kernels supported, got {w.shape}")
    if x.ndim != 4 or x.shape[1] != inC:
        raise ValueError(f"input shape {x.shape} does not match weight shape {w.shape}")
    cols, oh, ow = _im2col(x, k, stride, padding)
    y = np.matmul(w.reshape(outC, -1), cols)
    if b is not None:
        y += b[:, None]
    y = y.reshape(x.shape[0], outC, oh, ow)
    ctx = (x.shape, cols, w, b is not None, stride, padding, oh, ow)
    return y, ctx


def conv2d_backward(ctx, gy: np.ndarray):
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    x_shape, cols, w, has_bias, stride, padding, oh, ow = ctx
    B = x_shape[0]
    outC, inC, k, _ = w.shape
    G = gy.reshape(B, outC, oh * ow)
    gw = np.tensordot(G, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    gb = gy.sum(axis=(0, 2, 3)) if has_bias else None
    gcols = np.matmul(w.reshape(outC, -1).T, G)
    gx = _col2im(gcols, x_shape, k, stride, padding, oh, ow)
    return gx, gw, gb


def _bilinear_taps(py: np.ndarray, px: np.ndarray, H: int, W: int):
    """Integer corners, fractional weights, and validity masks for bilinear sampling."""
    y0 = np.floor(py)
    x0 = np.floor(px)
    wy = py - y0
    wx = px - x0
    y0 = y0.astype(np.intp)
    x0 = x0.astype(np.intp)
    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yi = y0 + dy
        xi = x0 + dx
        mask = (yi >= 0) & (yi < H) & (xi >= 0) & (xi < W)
        corners.append((np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1), mask))
    return corners, wy, wx


def deformable_conv2d_forward(
    x: np.ndarray,
    w: np.ndarray,
    offsets: np.ndarray,
    b: np.ndarray | None = None,
    stride: int = 1,
    padding: int | None = None,
):
    """Convolution whose kernel taps sample at learned fractional positions.

    Tap t = di*k + dj reads the input at (base_y + di + dy_t, base_x + dj + dx_t)
    via bilinear interpolation, where offsets channel 2t holds dx_t and 2t+1
    holds dy_t. Samples outside the input read as zero.

    Args:
        x: (B, inC, H, W) input.
        w: (outC, inC, k, k) weights.
        offsets: (B, 2*k*k, oh, ow) per-tap displacements.
        b: optional (outC,) bias.
    """
    outC, inC, k, _ = w.shape
    if padding is None:
        padding = k // 2
    B, C, H, W = x.shape
    if C != inC:
        raise ValueError(f"input channels {C} do not match weights {w.shape}")
    ktaps = k * k
    if offsets.shape[0] != B or offsets.shape[1] != 2 * ktaps:
        raise ValueError(
            f"offsets must have shape (B, {2 * ktaps}, oh, ow), got {offsets.shape}"
        )
    oh, ow = offsets.shape[2], offsets.shape[3]
    if oh != _out_size(H, k, stride, padding) or ow != _out_size(W, k, stride, padding):
        raise ValueError(
            f"offset spatial shape {(oh, ow)} does not match conv output "
            f"{(_out_size(H, k, stride, padding), _out_size(W, k, stride, padding))}"
        )

    base_y = np.arange(oh, dtype=x.dtype) * stride - padding
    base_x = np.arange(ow, dtype=x.dtype) * stride - padding
    xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # (B, H, W, C) for gathers
    bidx = np.arange(B)[:, None, None]

    cols = np.empty((B, C, ktaps, oh, ow), dtype=x.dtype)
    for t in range(ktaps):
        di, dj = divmod(t, k)
        py = base_y[None, :, None] + di + offsets[:, 2 * t + 1]
        px = base_x[None, None, :] + dj + offsets[:, 2 * t]
        corners, wy, wx = _bilinear_taps(py, px, H, W)
        (y00, x00, m00), (y01, x01, m01), (y10, x10, m10), (y11, x11, m11) = corners
        v00 = xt[bidx, y00, x00] * m00[..., None]
        v01 = xt[bidx, y01, x01] * m01[..., None]
        v10 = xt[bidx, y10, x10] * m10[..., None]
        v11 = xt[bidx, y11, x11] * m11[..., None]
        wy_ = wy[..., None]
        wx_ = wx[..., None]
        val = (1 - wy_) * ((1 - wx_) * v00 + wx_ * v01) + wy_ * ((1 - wx_) * v10 + wx_ * v11)
        cols[:, :, t] = np.moveaxis(val, -1, 1)

    cols_mat = cols.reshape(B, C * ktaps, oh * ow)
    y = np.matmul(w.reshape(outC, -1), cols_mat)
    if b is not None:
        y += b[:, None]
    y = y.reshape(B, outC, oh, ow)
    ctx = (x, xt, w, b is not None, offsets, stride, padding, cols_mat, oh, ow)
    return y, ctx


def deformable_conv2d_backward(ctx, gy: np.ndarray):
    """Gradients of deformable_conv2d_forward w.r.t. input, weights, bias, offsets."""
    x, xt, w, has_bias, offsets, stride, padding, cols_mat, oh, ow = ctx
    B, C, H, W = x.shape
    outC, _, k, _ = w.shape
    ktaps = k * k

    G = gy.reshape(B, outC, oh * ow)
    gw = np.tensordot(G, cols_mat, axes=([0, 2], [0, 2])).reshape(w.shape)
    gb = gy.sum(axis=(0, 2, 3)) if has_bias else None
    gcols = np.matmul(w.reshape(outC, -1).T, G).reshape(B, C, ktaps, oh, ow)

    base_y = np.arange(oh, dtype=x.dtype) * stride - padding
    base_x = np.arange(ow, dtype=x.dtype) * stride - padding
    bidx = np.arange(B)[:, None, None]
    goffsets = np.empty_like(offsets)
    gxt = np.zeros_like(xt)  # (B, H, W, C)
    flat_gxt = gxt.reshape(B * H * W, C)

    for t in range(ktaps):
        di, dj = divmod(t, k)
        py = base_y[None, :, None] + di + offsets[:, 2 * t + 1]
        px = base_x[None, None, :] + dj + offsets[:, 2 * t]
        corners, wy, wx = _bilinear_taps(py, px, H, W)
        (y00, x00, m00), (y01, x01, m01), (y10, x10, m10), (y11, x11, m11) = corners
        v00 = xt[bidx, y00, x00] * m00[..., None]
        v01 = xt[bidx, y01, x01] * m01[..., None]
        v10 = xt[bidx, y10, x10] * m10[..., None]
        v11 = xt[bidx, y11, x11] * m11[..., None]

        gval = np.moveaxis(gcols[:, :, t], 1, -1)  # (B, oh, ow, C)
        wy_ = wy[..., None]
        wx_ = wx[..., None]

        # position gradients: bilinear interpolation is linear in each coordinate
        dval_dx = (1 - wy_) * (v01 - v00) + wy_ * (v11 - v10)
        dval_dy = (1 - wx_) * (v10 - v00) + wx_ * (v11 - v01)
        goffsets[:, 2 * t] = np.einsum("bhwc,bhwc->bhw", gval, dval_dx)
        goffsets[:, 2 * t + 1] = np.einsum("bhwc,bhwc->bhw", gval, dval_dy)

        # input gradients: scatter the four corner contributions
        for (yi, xi, m), cw in (
            ((y00, x00, m00), (1 - wy_) * (1 - wx_)),
            ((y01, x01, m01), (1 - wy_) * wx_),
            ((y10, x10, m10), wy_ * (1 - wx_)),
            ((y11, x11, m11), wy_ * wx_),
        ):
            contrib = gval * cw * m[..., None]
            flat_idx = ((bidx * H + yi) * W + xi).ravel()
            np.add.at(flat_gxt, flat_idx, contrib.reshape(-1, C))

    gx = gxt.transpose(0, 3, 1, 2)
    return gx, gw, gb, goffsets


def _interp_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    """Row-stochastic 1D bilinear interpolation matrix (n_in*factor, n_in).

    Uses the align-corners-false convention: output sample i reads source
    coordinate (i + 0.5)/factor - 0.5, clamped at the borders.
    """
    n_out = n_in * factor
    src = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(np.intp)
    frac = src - i0
    i0c = np.clip(i0, 0, n_in - 1)
    i1c = np.clip(i0 + 1, 0, n_in - 1)
    M = np.zeros((n_out, n_in), dtype=dtype)
    np.add.at(M, (np.arange(n_out), i0c), (1.0 - frac).astype(dtype))
    np.add.at(M, (np.arange(n_out), i1c), frac.astype(dtype))
    return M


def bilinear_upsample_forward(x: np.ndarray, factor: int):
    """Bilinear upsampling by an integer factor (align-corners-false)."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return x, (None, None, 1)
    H, W = x.shape[2], x.shape[3]
    My = _interp_matrix(H, factor, x.dtype)
    Mx = _interp_matrix(W, factor, x.dtype)
    y = np.matmul(np.matmul(My, x), Mx.T)
    return y, (My, Mx, factor)


def bilinear_upsample_backward(ctx, gy: np.ndarray):
    My, Mx, factor = ctx
    if factor == 1:
        return gy
    return np.matmul(np.matmul(My.T, gy), Mx)


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask: np.ndarray, gy: np.ndarray):
    return gy * mask


def sigmoid(x):
    """Numerically stable logistic function, array or scalar."""
    return np.exp(-np.logaddexp(0.0, np.negative(x)))


def sigmoid_forward(x: np.ndarray):
    y = sigmoid(x).astype(x.dtype)
    return y, y


def sigmoid_backward(y: np.ndarray, gy: np.ndarray):
    return gy * y * (1.0 - y)


def pointwise_forward(x: np.ndarray, kind: str):
    """Elementwise activation dispatch; kind is 'relu' or 'sigmoid'."""
    if kind == "relu":
        y, ctx = relu_forward(x)
    elif kind == "sigmoid":
        y, ctx = sigmoid_forward(x)
    else:
        raise ValueError(f"unknown pointwise kind {kind!r}")
    return y, (kind, ctx)


def pointwise_backward(ctx, gy: np.ndarray):
    kind, inner = ctx
    if kind == "relu":
        return relu_backward(inner, gy)
    return sigmoid_backward(inner, gy)
