"""Define-by-run reverse-mode differentiation over float64 numpy arrays."""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import NotScalar

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    """A float64 array that may take part in a differentiation graph.

    ``parents`` and ``backward_fn`` form the graph edge: ``backward_fn`` maps
    the output gradient to a tuple of gradients, one per parent (``None`` for
    parents that do not need one).
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            or data.dtype != np.float64 else data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"

    # construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data, parents, backward_fn, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = parents
            out.backward_fn = backward_fn
        else:
            out.requires_grad = False
            out.parents = ()
            out.backward_fn = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # operator sugar --------------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.div(self, other)
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss, parameters=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves listed in ``parameters`` that the loss does not reach receive a
    zero gradient (existing gradients are left untouched).
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad:
        grads = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            pgrads = node.backward_fn(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg
    if parameters is not None:
        for p in parameters:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
