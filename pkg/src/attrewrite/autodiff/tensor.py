"""Tensor and tape for reverse-mode differentiation.

Every primitive in :mod:`attrewrite.autodiff.ops` produces a new
:class:`Tensor`. When gradient recording is enabled and at least one input
requires a gradient, the primitive appends a node to the active
:class:`Tape`. :func:`backward` replays the tape in exact reverse order and
accumulates gradients additively.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_local = threading.local()


def _state():
    st = getattr(_local, "state", None)
    if st is None:
        st = _local.state = {"tapes": [Tape()], "grad": True, "dtype": np.float32}
    return st


def default_dtype():
    return _state()["dtype"]


@contextlib.contextmanager
def precision(mode: str) -> Iterator[None]:
    """Switch newly created tensors to ``"high"`` (float64) or ``"standard"`` (float32)."""
    dtypes = {"high": np.float64, "standard": np.float32}
    if mode not in dtypes:
        raise ValueError(f"unknown precision mode {mode!r}")
    st = _state()
    old = st["dtype"]
    st["dtype"] = dtypes[mode]
    try:
        yield
    finally:
        st["dtype"] = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate primitives without recording anything on the tape."""
    st = _state()
    old = st["grad"]
    st["grad"] = False
    try:
        yield
    finally:
        st["grad"] = old


def grad_enabled() -> bool:
    return _state()["grad"]


class Tensor:
    """A dense array with an optional gradient buffer.

    Leaf tensors created with ``requires_grad=True`` are parameters; their
    ``grad`` buffer is populated by :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_leaf")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; the primitives live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed primitives."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes = []

    def __enter__(self) -> "Tape":
        _state()["tapes"].append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state()["tapes"].pop()


def active_tape() -> Tape:
    return _state()["tapes"][-1]


def make_result(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap a primitive's output and register its backward rule."""
    if not np.isfinite(value).all():
        raise FloatingPointError("non-finite value produced by forward op")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.grad = None
    out.name = None
    out._leaf = False
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        active_tape().record(Node(out, inputs, backward))
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``.

    The tape is consumed: it is cleared once the replay finishes.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else active_tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._leaf:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += gi
                else:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
        if loss._leaf and loss.requires_grad:
            loss.grad = (loss.grad if loss.grad is not None else 0) + np.ones_like(loss.data)
    finally:
        tape.clear()
