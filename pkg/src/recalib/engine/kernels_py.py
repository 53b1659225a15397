"""Pure numpy implementations of the hot convolution kernels.

These mirror the compiled versions in ``_native`` exactly, including the
accumulation order of ``col2im`` (kernel offsets outermost), so both
backends produce bitwise-identical results for the same inputs.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Unfold (N, C, H, W) into patch columns of shape (N, C*k*k, L).

    The second axis orders channel outermost, then kernel row, then kernel
    column, matching a (C_out, C_in, k, k) weight reshaped to 2-D.
    """
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        h, w = h + 2 * padding, w + 2 * padding
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    sn, sc, sh, sw = x.strides
    windows = as_strided(
        x,
        shape=(n, c, k, k, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(n, c * k * k, ho * wo)


def col2im(
    cols: np.ndarray, h: int, w: int, k: int, stride: int, padding: int
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to (N, C, H, W).

    Accumulates one (ki, kj) kernel offset at a time so every output element
    receives its contributions in the same order as the compiled kernel.
    """
    n = cols.shape[0]
    c = cols.shape[1] // (k * k)
    l = cols.shape[2]
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho * wo != l:
        raise ValueError(f"col2im: {l} columns inconsistent with output {ho}x{wo}")
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += cols6[
                :, :, ki, kj
            ]
    if padding:
        out = out[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(out)


def depthwise_conv2d(
    x: np.ndarray, weight: np.ndarray, stride: int, padding: int
) -> np.ndarray:
    """Depthwise cross-correlation, weight (C, 1, k, k), one filter per channel.

    Accumulates kernel offsets in (ki, kj) order, same as the compiled kernel.
    """
    n, c, h, w = x.shape
    k = weight.shape[2]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        h, w = h + 2 * padding, w + 2 * padding
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    wv = weight.reshape(c, k, k)
    for ki in range(k):
        for kj in range(k):
            patch = x[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            out += patch * wv[:, ki, kj][None, :, None, None]
    return out


def depthwise_conv2d_backward(
    x: np.ndarray, weight: np.ndarray, gout: np.ndarray, stride: int, padding: int
):
    """Gradients of :func:`depthwise_conv2d` w.r.t. input and weight."""
    n, c, h, w = x.shape
    k = weight.shape[2]
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = gout.shape[2], gout.shape[3]
    xp = (
        np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else x
    )
    dxp = np.zeros((n, c, hp, wp), dtype=x.dtype)
    dw = np.zeros_like(weight)
    wv = weight.reshape(c, k, k)
    for ki in range(k):
        for kj in range(k):
            sl = np.s_[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            dxp[sl] += gout * wv[:, ki, kj][None, :, None, None]
            dw[:, 0, ki, kj] = np.einsum("nchw,nchw->c", gout, xp[sl])
    if padding:
        dxp = dxp[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(dxp), dw
