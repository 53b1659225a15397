# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (im2col / col2im / depthwise).

Loop nests accumulate in the same order as the numpy fallbacks in
``kernels_py`` (kernel offsets outermost per output element), so the two
backends agree bitwise.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] x, int k, int stride, int padding):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t hp = h + 2 * padding, wp = w + 2 * padding
    cdef Py_ssize_t ho = (hp - k) // stride + 1, wo = (wp - k) // stride + 1
    cdef Py_ssize_t l = ho * wo
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((n, c * k * k, l), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, ci, ki, kj, oh, ow, ih, iw, row
    with nogil:
        for i in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ci * k + ki) * k + kj
                        for oh in range(ho):
                            ih = oh * stride + ki - padding
                            for ow in range(wo):
                                iw = ow * stride + kj - padding
                                if 0 <= ih < h and 0 <= iw < w:
                                    out[i, row, oh * wo + ow] = x[i, ci, ih, iw]
                                else:
                                    out[i, row, oh * wo + ow] = 0
    return out_arr


def col2im(floating[:, :, ::1] cols, int h, int w, int k, int stride, int padding):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t c = cols.shape[1] // (k * k)
    cdef Py_ssize_t hp = h + 2 * padding, wp = w + 2 * padding
    cdef Py_ssize_t ho = (hp - k) // stride + 1, wo = (wp - k) // stride + 1
    if ho * wo != cols.shape[2]:
        raise ValueError(
            f"col2im: {cols.shape[2]} columns inconsistent with output {ho}x{wo}"
        )
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, ci, ki, kj, oh, ow, ih, iw, row
    with nogil:
        for i in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ci * k + ki) * k + kj
                        for oh in range(ho):
                            ih = oh * stride + ki - padding
                            if ih < 0 or ih >= h:
                                continue
                            for ow in range(wo):
                                iw = ow * stride + kj - padding
                                if 0 <= iw < w:
                                    out[i, ci, ih, iw] += cols[i, row, oh * wo + ow]
    return out_arr


def depthwise_conv2d(
    floating[:, :, :, ::1] x, floating[:, :, :, ::1] weight, int stride, int padding
):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int k = <int> weight.shape[2]
    cdef Py_ssize_t hp = h + 2 * padding, wp = w + 2 * padding
    cdef Py_ssize_t ho = (hp - k) // stride + 1, wo = (wp - k) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n, c, ho, wo), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, ci, ki, kj, oh, ow, ih, iw
    cdef floating wv
    with nogil:
        for i in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        wv = weight[ci, 0, ki, kj]
                        for oh in range(ho):
                            ih = oh * stride + ki - padding
                            if ih < 0 or ih >= h:
                                continue
                            for ow in range(wo):
                                iw = ow * stride + kj - padding
                                if 0 <= iw < w:
                                    out[i, ci, oh, ow] += x[i, ci, ih, iw] * wv
    return out_arr


def depthwise_conv2d_backward(
    floating[:, :, :, ::1] x,
    floating[:, :, :, ::1] weight,
    floating[:, :, :, ::1] gout,
    int stride,
    int padding,
):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int k = <int> weight.shape[2]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.zeros((n, c, h, w), dtype=dtype)
    dw_arr = np.zeros((c, 1, k, k), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef floating[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t i, ci, ki, kj, oh, ow, ih, iw
    cdef floating wv, g
    # dw accumulates with sample index outermost, matching the fallback's
    # einsum reduction order.
    with nogil:
        for i in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        wv = weight[ci, 0, ki, kj]
                        for oh in range(ho):
                            ih = oh * stride + ki - padding
                            if ih < 0 or ih >= h:
                                continue
                            for ow in range(wo):
                                iw = ow * stride + kj - padding
                                if 0 <= iw < w:
                                    g = gout[i, ci, oh, ow]
                                    dx[i, ci, ih, iw] += g * wv
                                    dw[ci, 0, ki, kj] += g * x[i, ci, ih, iw]
    return dx_arr, dw_arr
