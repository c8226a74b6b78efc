"""PLDA similarity between two fixed-width encodings.

score(x, y) = w * x.y - x'Sx - y'Sy + b with S symmetric, so the score is
symmetric in its arguments; a sigmoid turns it into a same-speaker
probability during verifier training.
"""

from dataclasses import dataclass

import numpy as np

from ..autodiff import ShapeError, Tensor, ops


@dataclass
class PldaParams:
    w: float
    b: float
    S: np.ndarray

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.float64)
        if self.S.ndim != 2 or self.S.shape[0] != self.S.shape[1]:
            raise ShapeError(f"S must be square, got {self.S.shape}")
        if not np.allclose(self.S, self.S.T, atol=1e-6):
            raise ValueError("S must be symmetric")
        self.S = 0.5 * (self.S + self.S.T)  # remove float asymmetry exactly

    @property
    def dim(self):
        return self.S.shape[0]


def plda_score(x, y, params: PldaParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (params.dim,) or y.shape != (params.dim,):
        raise ShapeError(
            f"encoding widths {x.shape}/{y.shape} do not match S {params.S.shape}"
        )
    # quadratic terms summed before subtraction: float addition commutes, so
    # the score is bitwise symmetric in (x, y)
    quad = (x @ params.S @ x) + (y @ params.S @ y)
    return float((params.w * (x @ y) - quad) + params.b)


def plda_score_batch(xs, ys, params: PldaParams) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape[1] != params.dim or ys.shape[1] != params.dim:
        raise ShapeError(f"encoding width != {params.dim}")
    quad = np.einsum("bi,ij,bj->b", xs, params.S, xs) + np.einsum(
        "bi,ij,bj->b", ys, params.S, ys
    )
    return (params.w * np.einsum("bi,bi->b", xs, ys) - quad) + params.b


def plda_logits(x: Tensor, y: Tensor, w: Tensor, b: Tensor, m: Tensor) -> Tensor:
    """Differentiable batched score with S = M + M^T (symmetric by construction)."""
    s = ops.add(m, ops.permute(m, (1, 0)))
    xy = ops.total(ops.mul(x, y), axis=1)
    xsx = ops.total(ops.mul(ops.matmul(x, s), x), axis=1)
    ysy = ops.total(ops.mul(ops.matmul(y, s), y), axis=1)
    return ops.add(ops.sub(ops.mul(w, xy), ops.add(xsx, ysy)), b)
