"""Dense tensor with reverse-mode gradient tracking.

Every differentiable operation produces a ``Tensor`` holding a ``Node`` that
references its parent tensors and a closure mapping the output adjoint to the
parents' adjoints.  ``GradTape`` linearises that graph in topological order so
``backward`` can replay the adjoints exactly once each, last op first.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def record_branches():
    """Collect the discrete decisions (masks, argmax indices) taken by piecewise ops.

    Two evaluations with equal records lie on the same smooth piece of the
    function, which is what a finite-difference check needs.
    """
    prev = getattr(_state, "branches", None)
    log: list = []
    _state.branches = ("record", log)
    try:
        yield log
    finally:
        _state.branches = prev


@contextmanager
def replay_branches(log: list):
    """Re-use decisions captured by :func:`record_branches`, in the same order.

    Evaluating near the recorded point then follows the same smooth piece even
    where the free function would switch branches.
    """
    prev = getattr(_state, "branches", None)
    _state.branches = ("replay", iter(log))
    try:
        yield
    finally:
        _state.branches = prev


def branch(decision):
    """Route a piecewise decision through the active recorder, if any."""
    active = getattr(_state, "branches", None)
    if active is None:
        return decision
    kind, log = active
    if kind == "record":
        log.append(np.array(decision, copy=True))
        return decision
    try:
        return next(log)
    except StopIteration:
        raise ContractError("replayed graph takes more branch decisions than were recorded") from None


class Node:
    __slots__ = ("parents", "backward_fn", "name")

    def __init__(self, parents: Sequence["Tensor"], backward_fn: Callable, name: str):
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind not in "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    # construction helpers -------------------------------------------------
    @classmethod
    def from_op(cls, data: np.ndarray, parents, backward_fn, name: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.node = None
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out.node = Node(parents, backward_fn, name)
        return out

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

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad=grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # operators are bound in ops.py to avoid a circular import
    def __hash__(self):
        return id(self)


class GradTape:
    """Topologically ordered record of the ops that produced ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = []
        seen = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.nodes.append(t)
                continue
            if id(t) in seen or t.node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t.node.parents:
                if p.node is not None and id(p) not in seen:
                    stack.append((p, False))

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor, tape: Optional[GradTape] = None, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf tensor.

    Gradients add onto whatever is already stored, so two calls without
    ``zero_grad`` sum their contributions.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    if not loss.requires_grad:
        return
    if loss.node is None:
        loss.grad = grad.copy() if loss.grad is None else loss.grad + grad
        return
    if tape is None:
        tape = GradTape(loss)
    adjoints = {id(loss): grad}
    for t in reversed(tape.nodes):
        g = adjoints.pop(id(t), None)
        if g is None:
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p.node is None:
                p.grad = pg.astype(p.dtype, copy=True) if p.grad is None else p.grad + pg
            else:
                key = id(p)
                adjoints[key] = pg if key not in adjoints else adjoints[key] + pg
