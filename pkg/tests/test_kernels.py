"""The native and NumPy kernel backends must agree numerically."""

import numpy as np
import pytest

from fvk._kernels import _numpy as pyk

try:
    from fvk._kernels import _native as natk

    BACKENDS = [pyk, natk]
except ImportError:
    BACKENDS = [pyk]

needs_native = pytest.mark.skipif(len(BACKENDS) < 2, reason="native kernels not built")


@needs_native
def test_im2col_col2im_agree():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 17, 5)).astype(np.float32)
    for k in (1, 4, 5, 12):
        xp = np.ascontiguousarray(np.pad(x, ((0, 0), ((k - 1) // 2, k // 2), (0, 0))))
        a = pyk.im2col1d(xp, k)
        b = natk.im2col1d(xp, k)
        assert np.array_equal(a, b)
        dcol = rng.standard_normal(a.shape).astype(np.float32)
        da = pyk.col2im1d(dcol, k, xp.shape[1])
        db = natk.col2im1d(np.ascontiguousarray(dcol), k, xp.shape[1])
        assert np.allclose(da, db, atol=1e-6)


@needs_native
def test_glu_agree():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((6, 9, 10)).astype(np.float32)
    ya, sa = pyk.glu_forward(z)
    yb, sb = natk.glu_forward(z)
    assert np.allclose(ya, yb, atol=1e-6)
    dy = rng.standard_normal(ya.shape).astype(np.float32)
    assert np.allclose(pyk.glu_backward(dy, z, sa), natk.glu_backward(dy, z, sb), atol=1e-6)


@needs_native
def test_elu_agree():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((200,)).astype(np.float32) * 3
    ya, yb = pyk.elu_forward(x), natk.elu_forward(x)
    assert np.allclose(ya, yb, atol=1e-6)
    dy = rng.standard_normal(x.shape).astype(np.float32)
    assert np.allclose(pyk.elu_backward(dy, ya, x), natk.elu_backward(dy, yb, x), atol=1e-6)


@needs_native
def test_adam_agree():
    rng = np.random.default_rng(6)
    p1 = rng.standard_normal(400).astype(np.float32)
    p2 = p1.copy()
    m1 = np.zeros_like(p1)
    v1 = np.zeros_like(p1)
    m2, v2 = m1.copy(), v1.copy()
    for t in range(1, 6):
        g = rng.standard_normal(400).astype(np.float32)
        bc1, bc2 = 1 - 0.9**t, 1 - 0.999**t
        pyk.adam_step(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, bc1, bc2)
        natk.adam_step(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, bc1, bc2)
    assert np.allclose(p1, p2, atol=1e-6)
    assert np.allclose(m1, m2, atol=1e-6)
    assert np.allclose(v1, v2, atol=1e-6)


@needs_native
def test_overlap_add_agree():
    rng = np.random.default_rng(7)
    frames = rng.standard_normal((9, 32)).astype(np.float64)
    n = 8 * 10 + 32
    assert np.allclose(pyk.overlap_add(frames, 10, n), natk.overlap_add(frames, 10, n))
