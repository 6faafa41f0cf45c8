"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray; operations in :mod:`speechrl.nn.ops` build an
implicit DAG by attaching parent links and a backward closure to each
result. ``backward()`` walks the graph once in reverse topological order
and accumulates gradients additively, so a tensor feeding several
consumers receives the sum of their contributions.

Parameters are stored in float32; the ops force float64 accumulation in
dot products and reductions so float32 storage does not poison gradient
checks. Tensors built from float64 data stay float64 end to end, which is
what the finite-difference tests use.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not agree for the requested operation."""


_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable graph construction; forwards inside run as plain numpy."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def backward(self, seed=None):
        """Backpropagate from this node.

        ``seed`` defaults to ones, which is the usual choice for a scalar
        loss. Every reachable node is visited exactly once.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        topo = _toposort(self)
        self.grad = _accum(self.grad, np.ones_like(self.data) if seed is None else np.asarray(seed))
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = _accum(parent.grad, g)


def _accum(existing, g):
    if existing is None:
        # copy so a backward closure handing out a view cannot be aliased
        return np.array(g, copy=True)
    existing += g
    return existing


def _toposort(root: Tensor):
    """Iterative post-order DFS over grad-requiring nodes."""
    order = []
    seen = set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def make_node(data, parents, backward_fn) -> Tensor:
    """Wrap an op result, linking it into the graph when grads are live.

    ``backward_fn(out_grad)`` must return one gradient per parent (None
    for parents that do not need one), each shaped like that parent.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out
