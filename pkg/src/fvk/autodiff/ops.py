"""Differentiable primitives over :class:`~fvk.autodiff.tensor.Tensor`.

Float32 inputs route the packing / fused elementwise work through the
selected kernel backend; float64 inputs (gradient checks) always take the
NumPy path.
"""

import numpy as np

from .. import _kernels
from .._kernels import _numpy as _pyk
from .tensor import ShapeError, Tensor, make_op


def _kern_for(dtype):
    return _kernels.kernels if dtype == np.float32 else _pyk


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b):
    a = _wrap(a)
    b = _wrap(b, like=a)
    out = a.data + b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return make_op(out, (a, b), backward, "add")


def sub(a, b):
    a = _wrap(a)
    b = _wrap(b, like=a)
    out = a.data - b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape))]

    return make_op(out, (a, b), backward, "sub")


def mul(a, b):
    a = _wrap(a)
    b = _wrap(b, like=a)
    out = a.data * b.data

    def backward(g):
        return [
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        ]

    return make_op(out, (a, b), backward, "mul")


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return make_op(out, (a, b), backward, "matmul")


def bmm(a, b):
    """Batched matmul over leading axes (used per attention head)."""
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"bmm: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return [(a, g @ np.swapaxes(b.data, -1, -2)), (b, np.swapaxes(a.data, -1, -2) @ g)]

    return make_op(out, (a, b), backward, "bmm")


def reshape(x, shape):
    out = x.data.reshape(shape)

    def backward(g):
        return [(x, g.reshape(x.data.shape))]

    return make_op(out, (x,), backward, "reshape")


def permute(x, axes):
    axes = tuple(axes)
    out = np.ascontiguousarray(x.data.transpose(axes))
    inverse = np.argsort(axes)

    def backward(g):
        return [(x, np.ascontiguousarray(g.transpose(inverse)))]

    return make_op(out, (x,), backward, "permute")


def gather_rows(table, index):
    """Row lookup ``table[index]``; gradients scatter-add back into the table."""
    index = np.asarray(index, dtype=np.int64)
    out = table.data[index]

    def backward(g):
        d = np.zeros_like(table.data)
        np.add.at(d, index, g)
        return [(table, d)]

    return make_op(out, (table,), backward, "gather_rows")


# ---------------------------------------------------------------------------
# activations

def elu(x):
    k = _kern_for(x.dtype)
    y = k.elu_forward(x.data)

    def backward(g):
        return [(x, k.elu_backward(g, y, x.data))]

    return make_op(y, (x,), backward, "elu")


def relu(x):
    y = np.maximum(x.data, 0)

    def backward(g):
        return [(x, g * (x.data > 0))]

    return make_op(y, (x,), backward, "relu")


def sigmoid(x):
    y = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return [(x, g * y * (1.0 - y))]

    return make_op(y, (x,), backward, "sigmoid")


def tanh(x):
    y = np.tanh(x.data)

    def backward(g):
        return [(x, g * (1.0 - y * y))]

    return make_op(y, (x,), backward, "tanh")


def glu(x):
    """Gated linear unit over the last axis; that axis must be even."""
    if x.data.shape[-1] % 2:
        raise ShapeError(f"glu: last axis must be even, got {x.data.shape}")
    k = _kern_for(x.dtype)
    y, sig = k.glu_forward(x.data)

    def backward(g):
        return [(x, k.glu_backward(g, x.data, sig))]

    return make_op(y, (x,), backward, "glu")


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return [(x, y * (g - inner))]

    return make_op(y, (x,), backward, "softmax")


def absolute(x):
    y = np.abs(x.data)

    def backward(g):
        return [(x, g * np.sign(x.data))]

    return make_op(y, (x,), backward, "abs")


def square(x):
    y = x.data * x.data

    def backward(g):
        return [(x, g * 2.0 * x.data)]

    return make_op(y, (x,), backward, "square")


# ---------------------------------------------------------------------------
# reductions

def mean(x, axis=None):
    y = x.data.mean(axis=axis)
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return [(x, np.broadcast_to(g / count, x.data.shape).copy())]

    return make_op(np.asarray(y, dtype=x.dtype), (x,), backward, "mean")


def total(x, axis=None):
    y = x.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return [(x, np.broadcast_to(g, x.data.shape).copy())]

    return make_op(np.asarray(y, dtype=x.dtype), (x,), backward, "sum")


# ---------------------------------------------------------------------------
# convolution

def conv1d(x, w, bias=None):
    """Temporal convolution with 'same' zero padding, stride 1.

    x: (B, T, C_in), w: (k, C_in, C_out), bias: (C_out,).
    """
    if x.data.ndim != 3 or w.data.ndim != 3 or x.data.shape[2] != w.data.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes x{x.data.shape} w{w.data.shape}")
    b, t, cin = x.data.shape
    k, _, cout = w.data.shape
    left, right = (k - 1) // 2, k // 2
    kern = _kern_for(x.dtype)

    xp = np.ascontiguousarray(np.pad(x.data, ((0, 0), (left, right), (0, 0))))
    col = kern.im2col1d(xp, k)  # (B, T, k*C_in)
    wm = w.data.reshape(k * cin, cout)
    y = col.reshape(b * t, k * cin) @ wm
    if bias is not None:
        y = y + bias.data
    y = y.reshape(b, t, cout)

    def backward(g):
        gm = g.reshape(b * t, cout)
        dcol = (gm @ wm.T).reshape(b, t, k * cin)
        dxp = kern.col2im1d(np.ascontiguousarray(dcol), k, t + k - 1)
        dx = dxp[:, left : left + t, :]
        dw = (col.reshape(b * t, k * cin).T @ gm).reshape(k, cin, cout)
        grads = [(x, dx), (w, dw)]
        if bias is not None:
            grads.append((bias, gm.sum(axis=0)))
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return make_op(y, parents, backward, "conv1d")


def conv2d(x, w, bias=None, stride=(1, 1)):
    """Strided 2-D convolution of a single-channel map.

    x: (B, H, W); w: (kh, kw, C_out). Zero 'same' padding along H (time),
    valid along W (frequency). Output: (B, Ho, Wo, C_out).
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"conv2d: incompatible shapes x{x.data.shape} w{w.data.shape}")
    b, h, wd = x.data.shape
    kh, kw, cout = w.data.shape
    sh, sw = stride
    if wd < kw:
        raise ShapeError(f"conv2d: input width {wd} shorter than filter {kw}")
    top, bot = (kh - 1) // 2, kh - 1 - (kh - 1) // 2
    xp = np.pad(x.data, ((0, 0), (top, bot), (0, 0)))
    hp = xp.shape[1]
    ho = (hp - kh) // sh + 1
    wo = (wd - kw) // sw + 1

    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(b, ho, wo, kh, kw), strides=(s0, s1 * sh, s2 * sw, s1, s2)
    )
    col = np.ascontiguousarray(view).reshape(b * ho * wo, kh * kw)
    wm = w.data.reshape(kh * kw, cout)
    y = col @ wm
    if bias is not None:
        y = y + bias.data
    y = y.reshape(b, ho, wo, cout)

    def backward(g):
        gm = g.reshape(b * ho * wo, cout)
        dcol = (gm @ wm.T).reshape(b, ho, wo, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + ho * sh : sh, j : j + wo * sw : sw] += dcol[:, :, :, i, j]
        dx = dxp[:, top : top + h, :]
        dw = (col.T @ gm).reshape(kh, kw, cout)
        grads = [(x, dx), (w, dw)]
        if bias is not None:
            grads.append((bias, gm.sum(axis=0)))
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return make_op(y, parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# losses

def l1_loss(pred, target):
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"l1_loss: shape mismatch {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    y = np.abs(diff).mean()

    def backward(g):
        d = g * np.sign(diff) / diff.size
        return [(pred, d), (target, -d)]

    return make_op(np.asarray(y, dtype=pred.dtype), (pred, target), backward, "l1_loss")


def squared_loss(pred, target):
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"squared_loss: shape mismatch {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    y = (diff * diff).mean()

    def backward(g):
        d = g * 2.0 * diff / diff.size
        return [(pred, d), (target, -d)]

    return make_op(np.asarray(y, dtype=pred.dtype), (pred, target), backward, "squared_loss")


def cross_entropy_logits(logits, labels):
    """Mean softmax cross-entropy; labels are integer class indices."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(n), labels] - np.log(e.sum(axis=1)))
    y = nll.mean()

    def backward(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        return [(logits, g * d / n)]

    return make_op(np.asarray(y, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def sigmoid_ce_logits(logits, targets):
    """Mean binary cross-entropy on logits; targets in [0, 1]."""
    t = np.asarray(targets, dtype=logits.dtype)
    z = logits.data
    y = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean()
    s = 1.0 / (1.0 + np.exp(-z))

    def backward(g):
        return [(logits, g * (s - t) / z.size)]

    return make_op(np.asarray(y, dtype=logits.dtype), (logits,), backward, "sigmoid_ce")


# ---------------------------------------------------------------------------
# normalization / regularization

def batch_norm(x, gamma, beta, running, training, momentum=0.1, eps=1e-5):
    """Per-feature batch normalization over axis 0 of a 2-D input.

    ``running`` is a dict with 'mean' and 'var' arrays updated in place
    during training and used verbatim during evaluation.
    """
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running["mean"] += momentum * (mu - running["mean"])
        running["var"] += momentum * (var - running["var"])
    else:
        mu = running["mean"].astype(x.dtype)
        var = running["var"].astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        if training:
            n = x.data.shape[0]
            dx = (gamma.data * inv) * (
                g - g.mean(axis=0) - xhat * (g * xhat).sum(axis=0) / n
            )
        else:
            dx = g * gamma.data * inv
        return [(x, dx), (gamma, dgamma), (beta, dbeta)]

    return make_op(y, (x, gamma, beta), backward, "batch_norm")


def dropout(x, keep, rng, training):
    """Inverted dropout with keep probability ``keep``."""
    if not training or keep >= 1.0:
        return x
    mask = (rng.random(x.data.shape) < keep).astype(x.dtype) / keep
    y = x.data * mask

    def backward(g):
        return [(x, g * mask)]

    return make_op(y, (x,), backward, "dropout")


# ---------------------------------------------------------------------------
# recurrent step

def gru_step(x, h, p):
    """One gated-recurrent-unit step.

    x: (B, C_in), h: (B, C_h); ``p`` maps names wxr,whr,br, wxz,whz,bz,
    wxn,whn,bn to parameter tensors. Returns the next state (B, C_h).
    """
    if x.data.shape[0] != h.data.shape[0] or x.data.shape[1] != p["wxr"].data.shape[0]:
        raise ShapeError(
            f"gru_step: widths x{x.data.shape} h{h.data.shape} "
            f"wx{p['wxr'].data.shape}"
        )
    r = sigmoid(add(add(matmul(x, p["wxr"]), matmul(h, p["whr"])), p["br"]))
    z = sigmoid(add(add(matmul(x, p["wxz"]), matmul(h, p["whz"])), p["bz"]))
    n = tanh(add(add(matmul(x, p["wxn"]), mul(r, matmul(h, p["whn"]))), p["bn"]))
    one_minus_z = sub(1.0, z)
    return add(mul(one_minus_z, n), mul(z, h))
