"""Dense tensors with reverse-mode differentiation.

Every operation that sees a gradient-tracked input records itself on the
implicit tape (parent links plus a backward closure); ``backward()`` on a
scalar loss replays the tape in reverse topological order and accumulates
``d loss / d tensor`` into ``.grad`` for every tracked tensor.

Tensors are float32 by default; float64 is supported so numerical gradient
checks can run at full precision. Data arrays are treated as immutable once
an op has produced them. A tape belongs to the thread that built it;
independent graphs on different threads do not share state.
"""

import threading

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return not getattr(_state, "no_grad", False)


class no_grad:
    """Context manager that suspends tape recording on this thread."""

    def __enter__(self):
        self._prev = getattr(_state, "no_grad", False)
        _state.no_grad = True

    def __exit__(self, *exc):
        _state.no_grad = self._prev
        return False


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op."""


def _as_array(data, dtype):
    # always own the buffer: callers keep their arrays, ops keep their outputs
    if dtype is not None:
        return np.array(data, dtype=dtype)
    arr = np.array(data)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, name="", _copy=True):
        if _copy or not isinstance(data, np.ndarray):
            self.data = _as_array(data, dtype)
        else:
            self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype, name=self.name)

    def backward(self):
        """Populate gradients of every tracked tensor reachable from this scalar.

        Repeated calls without ``zero_grad`` accumulate into ``.grad``.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.data.shape}")

        order = _toposort(self)
        cotangent = {id(self): np.ones_like(self.data)}
        for t in order:  # already reversed: loss first
            g = cotangent.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            if t._backward is not None:
                for parent, pg in t._backward(g):
                    key = id(parent)
                    if key in cotangent:
                        cotangent[key] = cotangent[key] + pg
                    else:
                        cotangent[key] = pg

    # -- arithmetic sugar (the full op set lives in fvk.autodiff.ops) --

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def _toposort(root):
    """Tensors reachable from root, loss-first (reverse topological), iterative."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def make_op(out_data, parents, backward, name=""):
    """Wrap an op result, recording it on the tape when gradients are live.

    ``backward`` maps the output cotangent to ``[(parent, grad), ...]`` for
    the parents that require gradients.
    """
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=track, name=name, _copy=False)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out
