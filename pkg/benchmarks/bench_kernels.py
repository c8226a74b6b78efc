#!/usr/bin/env python3
"""Microbenchmark: native (Cython) kernels vs. the pure-NumPy fallback.

The matrix products run in BLAS on both paths; what the extension buys is
fused elementwise work and loop-free packing/scatter. Run after building
the extension (pip install -e .):

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from fvk._kernels import _numpy as pyk

try:
    from fvk._kernels import _native as natk
except ImportError:
    natk = None


def timeit(fn, *args, repeat=30):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def row(name, py_s, nat_s):
    speed = f"{py_s / nat_s:5.2f}x" if nat_s else "    -"
    nat = f"{nat_s * 1e3:8.3f}" if nat_s else "       -"
    print(f"{name:<26} {py_s * 1e3:8.3f} {nat} {speed}")


def main():
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26} {'python ms':>8} {'native ms':>8} {'speedup':>6}")

    # conv packing at encoder-layer geometry: batch 64 sets x 5 clips, T=20
    x = rng.standard_normal((320, 31, 128)).astype(np.float32)
    xp = np.ascontiguousarray(x)
    k = 12
    py = timeit(pyk.im2col1d, xp, k)
    nat = timeit(natk.im2col1d, xp, k) if natk else None
    row("im2col1d (320,31,128) k12", py, nat)

    dcol = rng.standard_normal((320, 20, 12 * 128)).astype(np.float32)
    py = timeit(pyk.col2im1d, dcol, 12, 31)
    nat = timeit(natk.col2im1d, dcol, 12, 31) if natk else None
    row("col2im1d", py, nat)

    z = rng.standard_normal((320, 20, 256)).astype(np.float32)
    py = timeit(pyk.glu_forward, z)
    nat = timeit(natk.glu_forward, z) if natk else None
    row("glu_forward (320,20,256)", py, nat)

    _, sig = pyk.glu_forward(z)
    dy = rng.standard_normal((320, 20, 128)).astype(np.float32)
    py = timeit(pyk.glu_backward, dy, z, sig)
    nat = timeit(natk.glu_backward, dy, z, sig) if natk else None
    row("glu_backward", py, nat)

    v = rng.standard_normal(2_000_000).astype(np.float32)
    py = timeit(pyk.elu_forward, v)
    nat = timeit(natk.elu_forward, v) if natk else None
    row("elu_forward (2M)", py, nat)

    p = rng.standard_normal(2_000_000).astype(np.float32)
    g = rng.standard_normal(2_000_000).astype(np.float32)
    m = np.zeros_like(p)
    s = np.zeros_like(p)

    def adam(mod):
        mod.adam_step(p, g, m, s, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)

    py = timeit(lambda: adam(pyk))
    nat = timeit(lambda: adam(natk)) if natk else None
    row("adam_step (2M params)", py, nat)

    frames = rng.standard_normal((40, 1200)).astype(np.float64)
    n = 39 * 300 + 1200
    py = timeit(pyk.overlap_add, frames, 300, n)
    nat = timeit(natk.overlap_add, np.ascontiguousarray(frames), 300, n) if natk else None
    row("overlap_add (40x1200)", py, nat)

    # end to end: one gated-conv layer forward+backward through the tape
    import os

    from fvk.autodiff import Tensor, ops

    w = Tensor(rng.standard_normal((12, 128, 256)).astype(np.float32) * 0.05,
               requires_grad=True)
    b = Tensor(np.zeros(256, dtype=np.float32), requires_grad=True)
    inp = Tensor(rng.standard_normal((320, 20, 128)).astype(np.float32))

    def layer():
        w.grad = b.grad = None
        ops.mean(ops.absolute(ops.glu(ops.conv1d(inp, w, b)))).backward()

    active = "native" if natk and os.environ.get("FVK_KERNELS") != "python" else "python"
    t = timeit(layer, repeat=10)
    print(f"\ngated conv layer fwd+bwd via ops ({active} backend): {t * 1e3:.1f} ms")
    print("re-run with FVK_KERNELS=python to time the fallback end to end")


if __name__ == "__main__":
    main()
