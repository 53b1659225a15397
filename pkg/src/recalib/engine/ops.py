"""Forward operators and their adjoints.

Every operator validates shapes up front (diagnostics name the offending
dimension), computes the forward value with numpy / the kernel backend, and
attaches a closure implementing the exact adjoint. Reductions use numpy's
pairwise summation or the backend kernels' fixed loop order, so repeated
runs on identical inputs are bitwise identical.

Gradient checks in double precision against central finite differences are
part of the test suite for every operator here.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .tensor import EngineError, ShapeError, Tensor, make_op


def _same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise EngineError(f"mixed dtypes in one operation: {sorted(map(str, dtypes))}")


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------


def _conv_out_size(h: int, k: int, stride: int, padding: int, dim: str) -> int:
    span = h + 2 * padding - k
    if span < 0:
        raise ShapeError(
            f"kernel {k} exceeds padded input {dim} dimension {h + 2 * padding}"
        )
    return span // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    *,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation. weight is (C_out, C_in/G, k, k)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D (N,C,H,W), got {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-D, got {weight.shape}")
    _same_dtype(x, weight)
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"only square kernels supported, got {kh}x{kw}")
    k = kh
    if groups < 1:
        raise ShapeError(f"groups must be >= 1, got {groups}")
    if cin % groups:
        raise ShapeError(f"input channels {cin} not divisible by groups {groups}")
    if cout % groups:
        raise ShapeError(f"output channels {cout} not divisible by groups {groups}")
    if cin_g != cin // groups:
        raise ShapeError(
            f"weight channel dimension {cin_g} != input channels/groups {cin // groups}"
        )
    if groups == cin and cout == cin:
        return _depthwise(x, weight, stride, padding)
    ho = _conv_out_size(h, k, stride, padding, "height")
    wo = _conv_out_size(w, k, stride, padding, "width")
    l = ho * wo

    cols = backend.im2col(x.data, k, stride, padding)  # (N, C*k*k, L)
    if groups == 1:
        wm = weight.data.reshape(cout, cin_g * k * k)
        x2 = cols.transpose(0, 2, 1).reshape(n * l, cin_g * k * k)
        out = (x2 @ wm.T).reshape(n, l, cout).transpose(0, 2, 1)
        out = np.ascontiguousarray(out).reshape(n, cout, ho, wo)
    else:
        og = cout // groups
        ckk_g = cin_g * k * k
        cols_g = cols.reshape(n, groups, ckk_g, l)
        wg = weight.data.reshape(groups, og, ckk_g)
        out = np.empty((n, groups, og, l), dtype=x.dtype)
        for g in range(groups):
            out[:, g] = np.matmul(wg[g], cols_g[:, g])
        out = out.reshape(n, cout, ho, wo)

    def grad_fn(gout: np.ndarray) -> None:
        g3 = gout.reshape(n, cout, l)
        # columns are recomputed instead of retained: trades one extra
        # unfold for ~k^2 less resident activation memory per layer
        cols_b = backend.im2col(x.data, k, stride, padding)
        if groups == 1:
            g2 = np.ascontiguousarray(g3.transpose(0, 2, 1)).reshape(n * l, cout)
            x2b = cols_b.transpose(0, 2, 1).reshape(n * l, cin_g * k * k)
            if weight.requires_grad:
                weight.accumulate_grad((g2.T @ x2b).reshape(weight.shape))
            if x.requires_grad:
                wm_b = weight.data.reshape(cout, cin_g * k * k)
                dcols = (g2 @ wm_b).reshape(n, l, cin_g * k * k).transpose(0, 2, 1)
                dcols = np.ascontiguousarray(dcols)
                x.accumulate_grad(backend.col2im(dcols, h, w, k, stride, padding))
        else:
            og_ = cout // groups
            ckk_g_ = cin_g * k * k
            colsb_g = cols_b.reshape(n, groups, ckk_g_, l)
            gg = g3.reshape(n, groups, og_, l)
            wg_b = weight.data.reshape(groups, og_, ckk_g_)
            if weight.requires_grad:
                dw = np.zeros_like(weight.data).reshape(groups, og_, ckk_g_)
                for g in range(groups):
                    # sum over batch of (Og,L)@(L,CKKg)
                    dw[g] = np.einsum(
                        "nol,nkl->ok", gg[:, g], colsb_g[:, g], optimize=True
                    )
                weight.accumulate_grad(dw.reshape(weight.shape))
            if x.requires_grad:
                dcols = np.empty((n, groups, ckk_g_, l), dtype=x.dtype)
                for g in range(groups):
                    dcols[:, g] = np.matmul(np.ascontiguousarray(wg_b[g].T), gg[:, g])
                dcols = dcols.reshape(n, cin * k * k, l)
                x.accumulate_grad(backend.col2im(dcols, h, w, k, stride, padding))

    return make_op(out, (x, weight), grad_fn)


def depthwise_conv2d(
    x: Tensor, weight: Tensor, *, stride: int = 1, padding: int = 0
) -> Tensor:
    """Depthwise cross-correlation: weight (C, 1, k, k), one filter per channel."""
    if x.ndim != 4:
        raise ShapeError(f"depthwise input must be 4-D, got {x.shape}")
    if weight.ndim != 4 or weight.shape[1] != 1:
        raise ShapeError(f"depthwise weight must be (C,1,k,k), got {weight.shape}")
    if weight.shape[0] != x.shape[1]:
        raise ShapeError(
            f"weight channel count {weight.shape[0]} != input channels {x.shape[1]}"
        )
    _same_dtype(x, weight)
    return _depthwise(x, weight, stride, padding)


def _depthwise(x: Tensor, weight: Tensor, stride: int, padding: int) -> Tensor:
    n, c, h, w = x.shape
    k = weight.shape[2]
    _conv_out_size(h, k, stride, padding, "height")
    _conv_out_size(w, k, stride, padding, "width")
    if k == 1 and stride == 1 and padding == 0:
        wv = weight.data.reshape(1, c, 1, 1)
        out = x.data * wv

        def grad_fn(gout: np.ndarray) -> None:
            if x.requires_grad:
                x.accumulate_grad(gout * wv)
            if weight.requires_grad:
                dw = np.einsum("nchw,nchw->c", gout, x.data)
                weight.accumulate_grad(dw.reshape(weight.shape))

        return make_op(out, (x, weight), grad_fn)

    out = backend.depthwise_conv2d(x.data, weight.data, stride, padding)

    def grad_fn(gout: np.ndarray) -> None:
        dx, dw = backend.depthwise_conv2d_backward(
            x.data, weight.data, gout, stride, padding
        )
        if x.requires_grad:
            x.accumulate_grad(dx)
        if weight.requires_grad:
            weight.accumulate_grad(dw)

    return make_op(out, (x, weight), grad_fn)


# ---------------------------------------------------------------------------
# pooling and pointwise
# ---------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: (N,C,H,W) -> (N,C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool input must be 4-D, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            scale = np.asarray(1.0 / (h * w), dtype=x.dtype)
            x.accumulate_grad(
                np.broadcast_to(gout[:, :, None, None], x.shape) * scale
            )

    return make_op(out, (x,), grad_fn)


def max_pool2d(
    x: Tensor, kernel: int, stride: int | None = None, padding: int = 0
) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d input must be 4-D, got {x.shape}")
    if padding >= kernel:
        raise ShapeError(f"padding {padding} must be smaller than kernel {kernel}")
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    k = kernel
    ho = _conv_out_size(h, k, stride, padding, "height")
    wo = _conv_out_size(w, k, stride, padding, "width")
    neg = np.asarray(-np.inf, dtype=x.dtype)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2), constant_values=neg)
    sn, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, ho, wo, k, k),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    flat = np.ascontiguousarray(win).reshape(n, c, ho * wo, k * k)
    idx = flat.argmax(axis=3)
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0].reshape(n, c, ho, wo)

    def grad_fn(gout: np.ndarray) -> None:
        if not x.requires_grad:
            return
        gcols = np.zeros((n, c, ho * wo, k * k), dtype=x.dtype)
        np.put_along_axis(gcols, idx[..., None], gout.reshape(n, c, ho * wo, 1), axis=3)
        # col2im expects (N, C*k*k, L) with the k*k axis inner per channel
        gcols = np.ascontiguousarray(gcols.transpose(0, 1, 3, 2)).reshape(
            n, c * k * k, ho * wo
        )
        x.accumulate_grad(backend.col2im(gcols, h, w, k, stride, padding))

    return make_op(out, (x,), grad_fn)


def avg_pool2d(
    x: Tensor, kernel: int, stride: int | None = None, padding: int = 0
) -> Tensor:
    """Fixed-window average pooling; zero padding counts toward the mean."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d input must be 4-D, got {x.shape}")
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    k = kernel
    ho = _conv_out_size(h, k, stride, padding, "height")
    wo = _conv_out_size(w, k, stride, padding, "width")
    cols = backend.im2col(x.data, k, stride, padding).reshape(n, c, k * k, ho * wo)
    out = cols.mean(axis=2).reshape(n, c, ho, wo)

    def grad_fn(gout: np.ndarray) -> None:
        if not x.requires_grad:
            return
        g = gout.reshape(n, c, 1, ho * wo) / np.asarray(k * k, dtype=x.dtype)
        gcols = np.broadcast_to(g, (n, c, k * k, ho * wo)).reshape(n, c * k * k, ho * wo)
        x.accumulate_grad(
            backend.col2im(np.ascontiguousarray(gcols), h, w, k, stride, padding)
        )

    return make_op(out, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gout * (x.data > 0))

    return make_op(out, (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, clamped into the open interval (0,1).

    Computed piecewise to avoid overflow; the clamp only acts where the
    exact value would round to 0.0 or 1.0 anyway.
    """
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    info = np.finfo(d.dtype)
    np.clip(out, info.tiny, np.nextafter(d.dtype.type(1.0), d.dtype.type(0.0)), out=out)

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gout * out * (1.0 - out))

    return make_op(out, (x,), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    out = a.data + b.data

    def grad_fn(gout: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(gout)
        if b.requires_grad:
            b.accumulate_grad(gout)

    return make_op(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    out = a.data * b.data

    def grad_fn(gout: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(gout * b.data)
        if b.requires_grad:
            b.accumulate_grad(gout * a.data)

    return make_op(out, (a, b), grad_fn)


def channel_scale(x: Tensor, weights: Tensor) -> Tensor:
    """Scale each channel by a scalar: out[n,c,i,j] = p[n,c] * x[n,c,i,j]."""
    if x.ndim != 4 or weights.ndim != 2:
        raise ShapeError(
            f"channel_scale expects (N,C,H,W) and (N,C), got {x.shape} and {weights.shape}"
        )
    if x.shape[:2] != weights.shape:
        raise ShapeError(
            f"channel count mismatch: input {x.shape[:2]} vs weights {weights.shape}"
        )
    _same_dtype(x, weights)
    p4 = weights.data[:, :, None, None]
    out = x.data * p4

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gout * p4)
        if weights.requires_grad:
            weights.accumulate_grad(np.einsum("nchw,nchw->nc", gout, x.data))

    return make_op(out, (x, weights), grad_fn)


def elementwise_scale(x: Tensor, weights: Tensor) -> Tensor:
    """Hadamard product of a feature map with a same-shaped weight map."""
    if x.ndim != 4:
        raise ShapeError(f"elementwise_scale expects 4-D input, got {x.shape}")
    return mul(x, weights)


def spatial_weighted_sum(x: Tensor, weight: Tensor) -> Tensor:
    """Per-channel learned spatial average: (N,C,H,W) x (C,H,W) -> (N,C)."""
    if x.ndim != 4 or weight.ndim != 3:
        raise ShapeError(
            f"spatial_weighted_sum expects (N,C,H,W) and (C,H,W), got {x.shape} and {weight.shape}"
        )
    if x.shape[1:] != weight.shape:
        raise ShapeError(
            f"weight map shape {weight.shape} does not match input {x.shape[1:]}"
        )
    _same_dtype(x, weight)
    out = np.einsum("nchw,chw->nc", x.data, weight.data)

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gout[:, :, None, None] * weight.data[None])
        if weight.requires_grad:
            weight.accumulate_grad(np.einsum("nchw,nc->chw", x.data, gout))

    return make_op(out, (x, weight), grad_fn)


def global_linear_map(x: Tensor, weight: Tensor) -> Tensor:
    """Full learned map from feature maps to a descriptor:
    (N,C,H,W) x (K,C,H,W) -> (N,K)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("global_linear_map expects 4-D input and 4-D weight")
    if x.shape[1:] != weight.shape[1:]:
        raise ShapeError(
            f"weight trailing shape {weight.shape[1:]} does not match input {x.shape[1:]}"
        )
    _same_dtype(x, weight)
    n = x.shape[0]
    kk = weight.shape[0]
    xm = x.data.reshape(n, -1)
    wm = weight.data.reshape(kk, -1)
    out = xm @ wm.T

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad((gout @ wm).reshape(x.shape))
        if weight.requires_grad:
            weight.accumulate_grad((gout.T @ xm).reshape(weight.shape))

    return make_op(out, (x, weight), grad_fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fully connected layer: (N,in) @ (out,in)^T + bias."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(
            f"linear expects 2-D input and weight, got {x.shape} and {weight.shape}"
        )
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"input features {x.shape[1]} != weight input dimension {weight.shape[1]}"
        )
    _same_dtype(x, weight)
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(
                f"bias shape {bias.shape} != output features ({weight.shape[0]},)"
            )
        out = out + bias.data

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gout @ weight.data)
        if weight.requires_grad:
            weight.accumulate_grad(gout.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gout.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, grad_fn)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    eps: float = 1e-5,
    momentum: float = 0.1,
    training: bool = False,
) -> Tensor:
    """Per-feature normalization over (N[,H,W]) with affine transform.

    Training mode standardizes with batch statistics and updates the running
    statistics in place by exponential moving average (the running variance
    uses the unbiased batch estimate). Inference mode uses only the running
    statistics.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm input must be 2-D or 4-D, got {x.shape}")
    f = x.shape[1]
    if gamma.shape != (f,) or beta.shape != (f,):
        raise ShapeError(
            f"gamma/beta must have shape ({f},), got {gamma.shape} and {beta.shape}"
        )
    _same_dtype(x, gamma, beta)
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, f) if x.ndim == 2 else (1, f, 1, 1)
    m = int(np.prod([x.shape[a] for a in axes]))

    if training:
        if x.shape[0] < 2:
            raise EngineError(
                "batch_norm in training mode requires batch size >= 2 "
                f"(got N={x.shape[0]}: batch variance is degenerate)"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * (var * (m / (m - 1.0)))
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)

    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def grad_fn(gout: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.accumulate_grad(np.sum(gout * xhat, axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(np.sum(gout, axis=axes))
        if not x.requires_grad:
            return
        gb = gamma.data.reshape(bshape)
        if training:
            dxhat = gout * gb
            s1 = dxhat.sum(axis=axes).reshape(bshape)
            s2 = np.sum(dxhat * xhat, axis=axes).reshape(bshape)
            dx = (inv.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
            x.accumulate_grad(dx)
        else:
            x.accumulate_grad(gout * gb * inv.reshape(bshape))

    return make_op(out, (x, gamma, beta), grad_fn)


# ---------------------------------------------------------------------------
# loss and reductions
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels.

    Uses log-sum-exp stabilization. Labels outside [0, num_classes) are
    rejected.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (N, classes), got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} != batch dimension ({logits.shape[0]},)"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise EngineError(f"labels must be integers, got dtype {labels.dtype}")
    n, k = logits.shape
    if n == 0:
        raise EngineError("softmax_cross_entropy on an empty batch")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= k:
        raise EngineError(
            f"label index out of range: valid [0,{k}), got "
            f"[{labels.min()},{labels.max()}]"
        )
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(n), labels]
    out = np.asarray((lse - picked).mean(), dtype=z.dtype)

    def grad_fn(gout: np.ndarray) -> None:
        if not logits.requires_grad:
            return
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        logits.accumulate_grad(p * (gout / np.asarray(n, dtype=z.dtype)))

    return make_op(out, (logits,), grad_fn)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(gout, x.shape).astype(x.dtype))

    return make_op(out, (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def grad_fn(gout: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gout.reshape(x.shape))

    return make_op(out, (x,), grad_fn)
