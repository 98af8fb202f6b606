"""Reverse-mode differentiation core.

A Tensor wraps a numpy array and, when gradients are enabled, remembers the
operation that produced it (a backward closure plus parent links).  Calling
``backward()`` on a scalar walks the graph in reverse topological order and
accumulates ``grad`` arrays on every tensor that requires them.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

_node_counter = itertools.count()
_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / finite-difference probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-d array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.node_id = next(_node_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, " \
               f"requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray, own: bool = False):
        """Add g to the stored gradient.

        ``own=True`` promises g is exclusively produced for this tensor (or is
        dead after this backward), letting the first accumulation skip a copy.
        """
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g if own else g.copy()
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | None = None):
        """Backpropagate from this node; requires a scalar unless seed is given."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for parent in node._parents:
                if parent.node_id not in seen:
                    stack.append((parent, False))
        self.grad = np.asarray(seed, dtype=self.data.dtype).reshape(self.data.shape)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)


class Parameter(Tensor):
    """Trainable tensor carrying Adam moment state."""

    __slots__ = ("m", "v", "t")

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.t = 0


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Result tensor of an op; records the graph only while grads are enabled."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(p for p in parents if p.requires_grad or p._parents)
        out._backward = backward
    return out
