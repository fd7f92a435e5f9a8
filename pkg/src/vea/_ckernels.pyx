# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im / max-pool kernels.

Every routine is a straight loop nest with no internal threading, so results
are bit-identical to the numpy fallback up to summation order in col2im
(which also matches: both accumulate kernel offsets in the same order).
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    """(N, C, H, W) -> (N*Ho*Wo, C*kh*kw), rows batch-major."""
    cdef Py_ssize_t n_img = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t height = x.shape[2], width = x.shape[3]
    cdef Py_ssize_t ho = (height + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (width + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t ncols = chans * kh * kw
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n_img * ho * wo, ncols), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, ix, row, col
    with nogil:
        for n in range(n_img):
            for oy in range(ho):
                for ox in range(wo):
                    row = (n * ho + oy) * wo + ox
                    col = 0
                    for c in range(chans):
                        for i in range(kh):
                            iy = oy * stride - pad + i
                            for j in range(kw):
                                ix = ox * stride - pad + j
                                if 0 <= iy < height and 0 <= ix < width:
                                    out[row, col] = x[n, c, iy, ix]
                                else:
                                    out[row, col] = 0
                                col += 1
    return out_arr


def col2im(real[:, ::1] cols, Py_ssize_t n_img, Py_ssize_t chans,
           Py_ssize_t height, Py_ssize_t width,
           int kh, int kw, int stride, int pad):
    """Adjoint of im2col: scatter-add columns back to (N, C, H, W)."""
    cdef Py_ssize_t ho = (height + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (width + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n_img, chans, height, width), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, ix, row, col
    if cols.shape[0] != n_img * ho * wo or cols.shape[1] != chans * kh * kw:
        raise ValueError(
            f"col2im: columns {tuple(cols.shape)} do not match "
            f"({n_img * ho * wo}, {chans * kh * kw})"
        )
    with nogil:
        # offset-major order mirrors the numpy fallback's accumulation order
        for i in range(kh):
            for j in range(kw):
                for n in range(n_img):
                    for c in range(chans):
                        col = (c * kh + i) * kw + j
                        for oy in range(ho):
                            iy = oy * stride - pad + i
                            if iy < 0 or iy >= height:
                                continue
                            row = (n * ho + oy) * wo
                            for ox in range(wo):
                                ix = ox * stride - pad + j
                                if 0 <= ix < width:
                                    out[n, c, iy, ix] += cols[row + ox, col]
    return out_arr


def maxpool_forward(real[:, :, :, ::1] x, int k, int stride, int pad):
    """Returns (out, argmax) where argmax holds flat H*W input indices."""
    cdef Py_ssize_t n_img = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t height = x.shape[2], width = x.shape[3]
    cdef Py_ssize_t ho = (height + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (width + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n_img, chans, ho, wo), dtype=dtype)
    arg_arr = np.empty((n_img, chans, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, c, oy, ox, i, j, iy, ix, best_idx
    cdef real best, v
    with nogil:
        for n in range(n_img):
            for c in range(chans):
                for oy in range(ho):
                    for ox in range(wo):
                        best_idx = -1
                        best = 0
                        for i in range(k):
                            iy = oy * stride - pad + i
                            if iy < 0 or iy >= height:
                                continue
                            for j in range(k):
                                ix = ox * stride - pad + j
                                if ix < 0 or ix >= width:
                                    continue
                                v = x[n, c, iy, ix]
                                # strict > keeps the first maximum in scan order
                                if best_idx < 0 or v > best:
                                    best = v
                                    best_idx = iy * width + ix
                        out[n, c, oy, ox] = best
                        arg[n, c, oy, ox] = best_idx
    return out_arr, arg_arr


def maxpool_backward(real[:, :, :, ::1] grad_out, cnp.int64_t[:, :, :, ::1] arg,
                     Py_ssize_t height, Py_ssize_t width):
    cdef Py_ssize_t n_img = grad_out.shape[0], chans = grad_out.shape[1]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n_img, chans, height, width), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, oy, ox, idx
    with nogil:
        for n in range(n_img):
            for c in range(chans):
                for oy in range(ho):
                    for ox in range(wo):
                        idx = arg[n, c, oy, ox]
                        out[n, c, idx // width, idx % width] += grad_out[n, c, oy, ox]
    return out_arr
