"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects (plain arrays and
scalars are promoted as constants) and registers a backward rule.
Broadcasting follows numpy; gradients are summed back to each input's shape.
"""
import builtins

import numpy as np

from aratts import kernels
from aratts.autodiff.tensor import ShapeMismatch, Tensor, as_tensor, make


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from e


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    if not isinstance(a, Tensor):
        a = _const(a, b)
    b = _const(b, a)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make(ad * bd, (a, b), back, "mul")


def neg(a):
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c):
    """Multiply by a Python scalar constant."""
    return make(a.data * c, (a,), lambda g: (g * c,), "scale")


def cast(a, dtype):
    """Convert to ``dtype``; the gradient is converted back to the input's dtype."""
    dtype = np.dtype(dtype)
    if a.dtype == dtype:
        return a
    src = a.dtype
    return make(a.data.astype(dtype), (a,), lambda g: (g.astype(src),), "cast")


def exp(a):
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    return make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def clip(a, lo, hi):
    """Clamp to [lo, hi]; the gradient is zero where the clamp is active."""
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return make(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------------------
# activations


def relu(a):
    ad = a.data
    pos = ad > 0
    return make(ad * pos, (a,), lambda g: (g * pos,), "relu")


def tanh(a):
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh", check=False)


def _sigmoid(x):
    out = np.tanh(0.5 * x)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(a):
    out = _sigmoid(a.data)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid", check=False)


def gated_tanh(a, axis=1):
    """``tanh(first half) * sigmoid(second half)`` split along ``axis``."""
    ad = a.data
    n = ad.shape[axis]
    if n % 2:
        raise ShapeMismatch(f"gated_tanh: odd size {n} along axis {axis}")
    lo, hi = np.split(ad, 2, axis=axis)
    t = np.tanh(lo)
    s = _sigmoid(hi)
    out = t * s

    def back(g):
        return (np.concatenate([g * s * (1.0 - t * t), g * t * s * (1.0 - s)], axis=axis),)

    return make(out, (a,), back, "gated_tanh", check=False)


def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; positions where ``mask`` is False get weight 0.

    Masked entries are excluded before normalisation (the energy is treated
    as minus infinity), so they cannot leak probability mass.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (a,), back, "softmax")


def dropout(a, p, rng, training=True):
    """Inverted dropout: kept activations are scaled by 1/(1-p) during training."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def zoneout(prev, new, rate, rng=None, training=True):
    """Per-unit zoneout mix of a recurrent state.

    Training: each unit keeps ``prev`` with probability ``rate`` (mask drawn
    from ``rng``). Evaluation: ``rate * prev + (1 - rate) * new``.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("zoneout rate must be in [0, 1)")
    if rate == 0.0:
        return new
    if training:
        if rng is None:
            raise ValueError("training-mode zoneout needs a random generator")
        keep = rng.random(new.shape) < rate
        out = np.where(keep, prev.data, new.data)
        return make(out, (prev, new), lambda g: (g * keep, g * ~keep), "zoneout")
    out = rate * prev.data + (1.0 - rate) * new.data
    return make(out, (prev, new), lambda g: (g * rate, g * (1.0 - rate)), "zoneout")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum(a, axis=None, keepdims=False):  # noqa: A001
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    old = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis or p is None for p in parts)


def getitem(a, idx):
    shape, dtype = a.shape, a.dtype
    basic = _is_basic(idx)

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    # basic indexing returns a view; op outputs are never modified in place
    out = a.data[idx] if basic else np.array(a.data[idx])
    return make(out, (a,), back, "getitem", check=False)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from e
    return make(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(tensors, axis=0):
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) if axis >= 0 else
                reshape(t, t.shape + (1,)) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Batched matrix product (numpy ``@`` semantics for ndim >= 2)."""
    a = as_tensor(a)
    b = _const(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make(ad @ bd, (a, b), back, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis; ``weight`` is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return make(out, parents, lambda g: back(g)[:2], "linear")
    return make(out, parents, back, "linear")


def logabsdet(w):
    """``log|det W|`` of a square matrix; gradient ``W^{-T}``."""
    wd = w.data
    sign, val = np.linalg.slogdet(wd)
    if sign == 0:
        raise ShapeMismatch("logabsdet of a singular matrix")
    inv_t = np.linalg.inv(wd).T
    return make(np.asarray(val, dtype=wd.dtype), (w,), lambda g: (g * inv_t,), "logabsdet")


# ---------------------------------------------------------------------------
# convolutions (layout: batch, channels, time)


def conv1d(x, weight, bias=None, dilation=1):
    """Stride-1 'same' convolution (cross-correlation).

    ``x`` is (B, C_in, T), ``weight`` (C_out, C_in, K) with odd K. The taps
    are unrolled into a (K * C_in, T) column matrix so that the whole
    convolution is a single matrix product.
    """
    B, cin, T = x.shape
    cout, cin_w, k = weight.shape
    if cin != cin_w:
        raise ShapeMismatch(f"conv1d: input channels {cin} vs weight {weight.shape}")
    if k % 2 != 1:
        raise ShapeMismatch("conv1d: kernel width must be odd for same padding")
    out, w2, cols = conv1d_array(x.data, weight.data, None if bias is None else bias.data, dilation)

    def back(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        gcols = np.matmul(w2.T, g)
        if k == 1:
            gw, gx = gw[:, :, None], gcols
        else:
            gw = gw.reshape(cout, k, cin).transpose(0, 2, 1)
            gx = _fold(gcols, k, dilation, cin)
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make(out, parents, (lambda g: back(g)[: len(parents)]), "conv1d")


def conv1d_array(xd, wd, bd=None, dilation=1):
    """Forward pass of :func:`conv1d` on plain arrays; also returns the GEMM operands."""
    cout, cin, k = wd.shape
    if k == 1:
        w2 = wd[:, :, 0]
        cols = xd
    else:
        w2 = np.ascontiguousarray(wd.transpose(0, 2, 1)).reshape(cout, k * cin)
        cols = _unfold(xd, k, dilation)
    out = np.matmul(w2, cols)
    if bd is not None:
        out += bd[:, None]
    return out, w2, cols


def _tap_ranges(j, k, dilation, T):
    # tap j reads x[t + off]; returns (dst, src) slices of valid t
    off = (j - (k - 1) // 2) * dilation
    lo, hi = max(0, -off), min(T, T - off)
    return slice(lo, max(lo, hi)), slice(lo + off, max(lo, hi) + off)


def _unfold(xd, k, dilation):
    B, cin, T = xd.shape
    cols = np.empty((B, k, cin, T), dtype=xd.dtype)
    for j in range(k):
        dst, src = _tap_ranges(j, k, dilation, T)
        cols[:, j, :, dst] = xd[:, :, src]
        cols[:, j, :, :dst.start] = 0.0
        cols[:, j, :, dst.stop:] = 0.0
    return cols.reshape(B, k * cin, T)


def _fold(gcols, k, dilation, cin):
    B, _, T = gcols.shape
    gcols = gcols.reshape(B, k, cin, T)
    gx = np.zeros((B, cin, T), dtype=gcols.dtype)
    for j in range(k):
        dst, src = _tap_ranges(j, k, dilation, T)
        gx[:, :, src] += gcols[:, j, :, dst]
    return gx


def conv_transpose1d(x, weight, bias=None, stride=1):
    """Transposed convolution, ``x`` (B, C_in, T) and ``weight`` (C_in, C_out, K).

    Output length is ``(T - 1) * stride + K``.
    """
    B, cin, T = x.shape
    cin_w, cout, k = weight.shape
    if cin != cin_w:
        raise ShapeMismatch(f"conv_transpose1d: input {x.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    t_out = (T - 1) * stride + k
    # contributions[b, o, t, k] = sum_c x[b, c, t] w[c, o, k]
    contrib = np.einsum("bct,cok->botk", xd, wd, optimize=True)
    slack = -(-k // stride) * stride
    out = np.zeros((B, cout, T * stride + slack), dtype=np.result_type(xd, wd))
    _scatter_frames(out, contrib, stride)
    out = out[..., :t_out]
    if bias is not None:
        out += bias.data[None, :, None]

    def back(g):
        slack = -(-k // stride) * stride
        gpad = np.pad(g, ((0, 0), (0, 0), (0, T * stride + slack - t_out)))
        gc = _gather_frames(gpad, T, k, stride)  # (B, O, T, K)
        gx = np.einsum("botk,cok->bct", gc, wd, optimize=True)
        gw = np.einsum("botk,bct->cok", gc, xd, optimize=True)
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make(out, parents, (lambda g: back(g)[: len(parents)]), "conv_transpose1d")


def _scatter_frames(out, contrib, stride):
    k = contrib.shape[-1]
    for j in range(0, k, stride):
        width = min(stride, k - j)
        n = contrib.shape[2]
        seg = contrib[..., j:j + width]  # (B, O, T, width)
        view = out[..., j:j + n * stride].reshape(out.shape[0], out.shape[1], -1, stride)
        view[:, :, :n, :width] += seg


def _gather_frames(g, T, k, stride):
    B, O, _ = g.shape
    gc = np.empty((B, O, T, k), dtype=g.dtype)
    for j in range(0, k, stride):
        width = min(stride, k - j)
        view = g[..., j:j + T * stride].reshape(B, O, T, stride)
        gc[..., j:j + width] = view[..., :width]
    return gc


# ---------------------------------------------------------------------------
# layers as primitives


def embedding(ids, table):
    """Row lookup ``table[ids]``; gradient scatters back into the rows."""
    ids = np.asarray(ids, dtype=np.intp)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range [0, {n})")
    td = table.data

    def back(g):
        full = np.zeros_like(td)
        np.add.at(full, ids, g)
        return (full,)

    return make(td[ids], (table,), back, "embedding")


def batch_norm(x, gamma, beta, running_mean, running_var, training=True,
               momentum=0.1, eps=1e-5, mask=None):
    """Per-channel normalisation of (B, C, T) or (B, C) inputs.

    In training mode the statistics come from the batch (only positions where
    ``mask`` (B, T) is true count) and the running buffers are updated in
    place; in evaluation mode the running buffers are used.
    """
    xd = x.data
    axes = (0,) if xd.ndim == 2 else (0, 2)
    shape = (1, -1) if xd.ndim == 2 else (1, -1, 1)
    g_ = gamma.data.reshape(shape)
    if not training:
        r = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean.reshape(shape)) * r.reshape(shape)
        out = g_ * xhat + beta.data.reshape(shape)

        def back_eval(g):
            return g * g_ * r.reshape(shape), (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return make(out, (x, gamma, beta), back_eval, "batch_norm")

    if mask is None:
        m = np.ones((xd.shape[0], 1) if xd.ndim == 2 else (xd.shape[0], 1, xd.shape[2]), dtype=xd.dtype)
    else:
        m = np.asarray(mask, dtype=xd.dtype)[:, None, :]
    n = np.broadcast_to(m, xd.shape).sum(axis=axes, keepdims=True)
    mu = (xd * m).sum(axis=axes, keepdims=True) / n
    xc = xd - mu
    var = (m * xc * xc).sum(axis=axes, keepdims=True) / n
    r = 1.0 / np.sqrt(var + eps)
    xhat = xc * r
    out = g_ * xhat + beta.data.reshape(shape)

    count = float(n.reshape(-1)[0])
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu.reshape(-1)
    unbiased = var.reshape(-1) * (count / builtins.max(count - 1.0, 1.0))
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased

    def back(g):
        gy = g * g_
        s1 = gy.sum(axis=axes, keepdims=True)
        s2 = (gy * xc).sum(axis=axes, keepdims=True)
        gx = gy * r - (m / n) * (r * s1) - m * xc / n * (r ** 3) * s2
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make(out, (x, gamma, beta), back, "batch_norm")


def lstm_pointwise(gates, c_prev):
    """Fused gate nonlinearities; returns ``[h | c]`` of shape (B, 2H)."""
    if gates.shape[1] != 4 * c_prev.shape[1]:
        raise ShapeMismatch(f"lstm gates {gates.shape} vs state {c_prev.shape}")
    cd = c_prev.data.astype(gates.dtype, copy=False)
    hc, acts = kernels.lstm_pointwise_forward(gates.data, cd)

    def back(g):
        dg, dc = kernels.lstm_pointwise_backward(g.astype(gates.dtype, copy=False), acts, cd)
        return dg, dc

    return make(hc, (gates, c_prev), back, "lstm_pointwise")


def lstm_cell(x, h, c, w_ih, w_hh, bias, input_proj=None):
    """One LSTM step with gate order (input, forget, cell, output).

    ``input_proj`` may carry a precomputed ``x @ w_ih.T`` for this step, in
    which case ``x`` and ``w_ih`` are ignored.
    """
    xi = input_proj if input_proj is not None else linear(x, w_ih)
    gates = add(add(xi, linear(h, w_hh)), bias)
    hc = lstm_pointwise(gates, c)
    H = c.shape[1]
    return getitem(hc, (slice(None), slice(0, H))), getitem(hc, (slice(None), slice(H, 2 * H)))


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred, target, mask=None):
    """Mean squared error over the elements selected by ``mask`` (broadcastable)."""
    pd = pred.data
    td = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pd.dtype)
    if pd.shape != td.shape:
        raise ShapeMismatch(f"mse_loss: {pd.shape} vs {td.shape}")
    w = np.ones_like(pd) if mask is None else np.broadcast_to(np.asarray(mask, dtype=pd.dtype), pd.shape)
    n = builtins.max(w.sum(), 1.0)
    diff = (pd - td) * w
    val = np.asarray((diff * diff).sum() / n, dtype=pd.dtype)

    def back(g):
        gp = 2.0 * g * diff / n
        return gp, -gp

    parents = (pred, target) if isinstance(target, Tensor) else (pred,)
    return make(val, parents, (lambda g: back(g)[: len(parents)]), "mse_loss")


def bce_with_logits_loss(logits, targets, mask=None):
    """Mean binary cross-entropy on logits, numerically stable form."""
    x = logits.data
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=x.dtype)
    w = np.ones_like(x) if mask is None else np.broadcast_to(np.asarray(mask, dtype=x.dtype), x.shape)
    n = builtins.max(w.sum(), 1.0)
    per = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    val = np.asarray((per * w).sum() / n, dtype=x.dtype)

    def back(g):
        return (g * (_sigmoid(x) - t) * w / n,)

    return make(val, (logits,), back, "bce_with_logits_loss")
