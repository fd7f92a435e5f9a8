"""Pure-numpy versions of the hot kernels in ``_ckernels.pyx``.

Signatures and accumulation order match the compiled module exactly so the two
backends are interchangeable bit for bit.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, C, Ho, Wo, kh, kw) -> (N, Ho, Wo, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def col2im(cols, n, c, h, w, kh, kw, stride, pad):
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    if cols.shape != (n * ho * wo, c * kh * kw):
        raise ValueError(
            f"col2im: columns {cols.shape} do not match ({n * ho * wo}, {c * kh * kw})"
        )
    parts = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += parts[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def maxpool_forward(x, k, stride, pad):
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    win = win.reshape(n, c, ho, wo, k * k)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    # local window index -> flat index into the unpadded H*W plane
    iy = np.arange(ho)[:, None] * stride - pad + local // k
    ix = np.arange(wo)[None, :] * stride - pad + local % k
    return np.ascontiguousarray(out), (iy * w + ix).astype(np.int64)


def maxpool_backward(grad_out, arg, h, w):
    n, c = grad_out.shape[:2]
    out = np.zeros((n * c, h * w), dtype=grad_out.dtype)
    rows = np.repeat(np.arange(n * c), arg.shape[2] * arg.shape[3])
    np.add.at(out, (rows, arg.reshape(-1)), grad_out.reshape(-1))
    return out.reshape(n, c, h, w)
