import numpy as np
import pytest


def finite_diff_fraction(build, params, h=1e-4, rtol=1e-4, max_coords=20, seed=0):
    """Central finite differences vs. tape gradients; returns passing fraction.

    ``build()`` must recompute the scalar loss Tensor from ``params``, which
    should be float64 tensors so the difference quotient is trustworthy at
    h=1e-4. The oracle only evaluates forward passes at perturbed parameter
    values; it never inspects the tape.
    """
    for p in params:
        p.zero_grad()
    build().backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    ok = total = 0
    for p, g in zip(params, grads):
        n = p.data.size
        idx = rng.choice(n, size=min(max_coords, n), replace=False)
        for i in idx:
            orig = p.data.flat[i]
            p.data.flat[i] = orig + h
            f_plus = float(build().data)
            p.data.flat[i] = orig - h
            f_minus = float(build().data)
            p.data.flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(g.flat[i])
            denom = max(abs(a), abs(fd))
            if denom < 1e-7:
                good = abs(a - fd) < 1e-7
            else:
                good = abs(a - fd) / denom < rtol
            ok += good
            total += 1
    return ok / total


def assert_grads_match(build, params, **kw):
    frac = finite_diff_fraction(build, params, **kw)
    assert frac >= 0.95, f"finite-difference agreement only {frac:.3f}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
