"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient record: the tensors
it was computed from and a closure applying the operation's adjoint.
``backward()`` on a scalar loss walks the graph in reverse topological
order and accumulates gradients additively into every reachable tensor
that requires them.
"""

from __future__ import annotations

import contextlib

import numpy as np


class EngineError(ValueError):
    """Invalid use of the tensor engine (shape mismatch, bad graph, ...)."""


class ShapeError(EngineError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- autodiff -------------------------------------------------------------

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match value shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Backpropagate from a scalar produced by a recorded forward pass."""
        if self.size != 1:
            raise EngineError(f"backward() requires a scalar, got shape {self.shape}")
        if self._grad_fn is None:
            raise EngineError("backward() on a tensor with no recorded forward pass")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)


class Parameter(Tensor):
    """Trainable tensor with a role tag and a weight-decay flag.

    Roles: conv-weight, bn-gamma, bn-beta, fc-weight, fc-bias. The role is
    fixed at construction.
    """

    __slots__ = ("_role", "decay")

    ROLES = ("conv-weight", "bn-gamma", "bn-beta", "fc-weight", "fc-bias")

    def __init__(self, data, role: str, decay: bool = True, dtype=None):
        if role not in self.ROLES:
            raise EngineError(f"unknown parameter role {role!r}")
        super().__init__(data, requires_grad=True, dtype=dtype)
        self._role = role
        self.decay = decay

    @property
    def role(self) -> str:
        return self._role


def make_op(
    out_data: np.ndarray, parents: tuple[Tensor, ...], grad_fn
) -> Tensor:
    """Wrap an op result, recording the dependency edge when grads are on."""
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out._parents = parents
        out._grad_fn = grad_fn
    return out
