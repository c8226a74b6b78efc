"""Pure-NumPy implementations of the hot kernels.

Same call signatures as the native (Cython) module; selected automatically
when the extension is unavailable or when FVK_KERNELS=python.
"""

import numpy as np

BACKEND = "python"


def im2col1d(xp, k):
    """Pack sliding windows of a padded sequence batch.

    xp: (B, T + k - 1, C) float32, already padded for 'same' output.
    Returns (B, T, k * C) with col[b, t] = xp[b, t : t + k].ravel().
    """
    b, tp, c = xp.shape
    t = tp - k + 1
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(xp, shape=(b, t, k, c), strides=(s0, s1, s1, s2))
    return np.ascontiguousarray(view).reshape(b, t, k * c)


def col2im1d(dcol, k, tp):
    """Adjoint of im2col1d: scatter-add window gradients back.

    dcol: (B, T, k * C); returns (B, tp, C) with tp = T + k - 1.
    """
    b, t, kc = dcol.shape
    c = kc // k
    dcol = dcol.reshape(b, t, k, c)
    dxp = np.zeros((b, tp, c), dtype=dcol.dtype)
    for j in range(k):
        dxp[:, j : j + t, :] += dcol[:, :, j, :]
    return dxp


def glu_forward(z):
    """Gated linear unit over the last axis: split z into (a, g), return a * sigmoid(g).

    Returns (out, sig) where sig is kept for the backward pass.
    """
    c = z.shape[-1] // 2
    a = z[..., :c]
    sig = 1.0 / (1.0 + np.exp(-z[..., c:]))
    return a * sig, sig


def glu_backward(dy, z, sig):
    c = z.shape[-1] // 2
    a = z[..., :c]
    dz = np.empty_like(z)
    dz[..., :c] = dy * sig
    dz[..., c:] = dy * a * sig * (1.0 - sig)
    return dz


def elu_forward(x):
    return np.where(x >= 0, x, np.expm1(x))


def elu_backward(dy, y, x):
    # d/dx ELU = 1 for x >= 0, exp(x) = y + 1 otherwise
    return dy * np.where(x >= 0, np.float32(1.0), y + np.float32(1.0))


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """Fused in-place Adam update with precomputed bias corrections."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def overlap_add(frames, hop, n):
    """Sum windowed frames into a signal of length n (float64)."""
    t, win = frames.shape
    out = np.zeros(n, dtype=np.float64)
    for i in range(t):
        out[i * hop : i * hop + win] += frames[i]
    return out
