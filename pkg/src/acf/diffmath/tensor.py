"""Dense tensors with recorded reverse-mode gradients.

Every op on a :class:`Tensor` that requires a gradient records its parents and
a vector-Jacobian closure. The graph lives only as long as the tensors that
reference it, so a fresh graph is built on every forward pass.
"""
from __future__ import annotations

import contextlib

import numpy as np

_DEFAULT_DTYPE = np.dtype(np.float32)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used when wrapping raw data."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


class Tensor:
    __slots__ = ("data", "parents", "vjp", "requires_grad", "name")
    # make ``ndarray <op> Tensor`` defer to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        if isinstance(data, np.ndarray) and data.dtype.kind == "f":
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.parents: tuple[Tensor, ...] = ()
        self.vjp = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # operators delegate to ops; imported lazily to keep this module standalone
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str = "") -> Tensor:
    """Leaf tensor that gradients are taken with respect to."""
    arr = np.asarray(data)
    if arr.dtype.kind != "f":
        arr = arr.astype(_DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=True, name=name)


def make_node(data: np.ndarray, parents, vjp) -> Tensor:
    """Wrap an op result, recording the graph edge only when needed."""
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad)
    if tracked:
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss.

    Returns gradients keyed by ``id`` of every leaf and intermediate tensor
    reached. Use :func:`grad` to collect them for named parameters.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if not loss.requires_grad:
        return grads
    for node in reversed(_toposort(loss)):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if node.parents:
            # intermediate gradients are not needed once propagated
            del grads[id(node)]
    return grads


def grad(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of ``loss`` for each named parameter (zeros when unreachable)."""
    raw = backward(loss)
    out = {}
    for name, p in params.items():
        g = raw.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.data.dtype)
    return out
