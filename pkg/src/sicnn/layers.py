"""Dense-tensor layer kernels with hand-derived gradients.

Forward functions return ``(output, cache)``; the matching backward takes
``(grad_output, cache)`` and returns input/parameter gradients that are
exact adjoints of the forward map.  Convolution is cross-correlation (no
kernel mirroring) with zero padding.  Kernels preserve the input dtype, so
the same code runs in float32 for training and float64 for verification.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError


def _window_view(x: np.ndarray, side: int, stride: int,
                 out_h: int, out_w: int) -> np.ndarray:
    n, c, _, _ = x.shape
    sn, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (n, c, out_h, out_w, side, side),
        (sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)


def conv_out_size(size: int, side: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - side) // stride + 1


def conv_forward(x: np.ndarray, filters: np.ndarray, bias: np.ndarray,
                 stride: int = 1, pad: int = 0):
    """Cross-correlate (n,c,h,w) with (k,c,s,s) filters, zero padding."""
    if x.ndim != 4 or filters.ndim != 4:
        raise ShapeMismatchError(
            f"conv expects 4-d input/filters, got {x.shape} / {filters.shape}")
    n, c, h, w = x.shape
    k, cf, s, s2 = filters.shape
    if cf != c or s != s2:
        raise ShapeMismatchError(
            f"filters {filters.shape} incompatible with input {x.shape}")
    if bias.shape != (k,):
        raise ShapeMismatchError(f"bias shape {bias.shape} != ({k},)")
    if s > h + 2 * pad or s > w + 2 * pad:
        raise ShapeMismatchError(
            f"filter side {s} exceeds padded input {h + 2*pad}x{w + 2*pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    oh = conv_out_size(h, s, stride, pad)
    ow = conv_out_size(w, s, stride, pad)
    win = _window_view(xp, s, stride, oh, ow)
    out = np.tensordot(win, filters, axes=([1, 4, 5], [1, 2, 3]))  # (n,oh,ow,k)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias[None, :, None, None]
    cache = (xp, x.shape, filters, stride, pad)
    return out, cache


def conv_backward(dout: np.ndarray, cache):
    """Gradients for input, filters and bias of :func:`conv_forward`."""
    xp, x_shape, filters, stride, pad = cache
    n, c, h, w = x_shape
    k, _, s, _ = filters.shape
    oh, ow = dout.shape[2], dout.shape[3]
    if dout.shape != (n, k, oh, ow):
        raise ShapeMismatchError(f"grad shape {dout.shape} unexpected")
    win = _window_view(xp, s, stride, oh, ow)
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # (k,c,s,s)
    # scatter dcols back onto the padded input, one kernel offset at a time
    dcols = np.tensordot(dout, filters, axes=(1, 0))  # (n,oh,ow,c,s,s)
    dxp = np.zeros_like(xp)
    for u in range(s):
        for v in range(s):
            dxp[:, :, u:u + oh * stride:stride, v:v + ow * stride:stride] += \
                dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return dx, dw.astype(filters.dtype, copy=False), db


def pool_out_size(size: int, side: int, stride: int) -> int:
    return (size - side) // stride + 1


def maxpool_forward(x: np.ndarray, side: int, stride: int):
    """Max pooling; remembers per-window argmax (ties -> lowest flat index)."""
    n, c, h, w = x.shape
    if side > h or side > w:
        raise ShapeMismatchError(f"pool window {side} exceeds input {h}x{w}")
    oh = pool_out_size(h, side, stride)
    ow = pool_out_size(w, side, stride)
    win = _window_view(x, side, stride, oh, ow).reshape(n, c, oh, ow, side * side)
    argmax = win.argmax(axis=4)
    out = np.take_along_axis(win, argmax[..., None], axis=4)[..., 0]
    cache = (x.shape, argmax, side, stride)
    return out, cache


def maxpool_backward(dout: np.ndarray, cache):
    x_shape, argmax, side, stride = cache
    n, c, h, w = x_shape
    oh, ow = argmax.shape[2], argmax.shape[3]
    if dout.shape != argmax.shape:
        raise ShapeMismatchError(f"grad shape {dout.shape} != {argmax.shape}")
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for p in range(side * side):
        u, v = divmod(p, side)
        contrib = np.where(argmax == p, dout, 0)
        dx[:, :, u:u + oh * stride:stride, v:v + ow * stride:stride] += contrib
    return dx


def avgpool_forward(x: np.ndarray, side: int, stride: int):
    n, c, h, w = x.shape
    if side > h or side > w:
        raise ShapeMismatchError(f"pool window {side} exceeds input {h}x{w}")
    oh = pool_out_size(h, side, stride)
    ow = pool_out_size(w, side, stride)
    win = _window_view(x, side, stride, oh, ow)
    out = win.mean(axis=(4, 5))
    cache = (x.shape, side, stride, oh, ow)
    return out, cache


def avgpool_backward(dout: np.ndarray, cache):
    x_shape, side, stride, oh, ow = cache
    if dout.shape[2:] != (oh, ow):
        raise ShapeMismatchError(f"grad shape {dout.shape} unexpected")
    dx = np.zeros(x_shape, dtype=dout.dtype)
    share = dout / (side * side)
    for u in range(side):
        for v in range(side):
            dx[:, :, u:u + oh * stride:stride, v:v + ow * stride:stride] += share
    return dx


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0)
    return out, x > 0


def relu_backward(dout: np.ndarray, cache):
    return dout * cache


def _channel_window_sum(v: np.ndarray, radius: int) -> np.ndarray:
    """Sum over channels within +-radius, clipped at the channel edges."""
    out = np.zeros_like(v)
    n_ch = v.shape[1]
    for off in range(-radius, radius + 1):
        lo, hi = max(0, -off), min(n_ch, n_ch - off)
        out[:, lo:hi] += v[:, lo + off:hi + off]
    return out


def lrn_forward(x: np.ndarray, depth_radius: int, alpha: float,
                beta: float, k: float):
    """Cross-channel response normalization.

    out[c] = x[c] * (k + alpha * sum_{|c'-c|<=r} x[c']^2)^(-beta)
    """
    sq_sum = _channel_window_sum(x * x, depth_radius)
    denom = k + alpha * sq_sum
    scale = denom ** (-beta)
    out = x * scale
    cache = (x, denom, scale, depth_radius, alpha, beta)
    return out, cache


def lrn_backward(dout: np.ndarray, cache):
    x, denom, scale, depth_radius, alpha, beta = cache
    # d out[c] / d x[j] = delta_cj * scale[c]
    #                     - 2 alpha beta x[c] denom[c]^(-beta-1) x[j] [|c-j|<=r]
    inner = dout * x * denom ** (-beta - 1.0)
    dx = dout * scale - 2.0 * alpha * beta * x * _channel_window_sum(inner, depth_radius)
    return dx


def fc_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """Affine map: (n, features) @ (classes, features)^T + bias."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeMismatchError(
            f"fc expects (n,f) x (k,f), got {x.shape} / {weights.shape}")
    out = x @ weights.T + bias[None, :]
    return out, (x, weights)


def fc_backward(dout: np.ndarray, cache):
    x, weights = cache
    dx = dout @ weights
    dw = dout.T @ x
    db = dout.sum(axis=0)
    return dx, dw, db


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its logit gradient."""
    n = logits.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatchError(f"labels shape {labels.shape} != ({n},)")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float((log_z - shifted[np.arange(n), labels]).mean())
    grad = softmax_probs(logits)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)
