"""Dense tensors and the reverse-mode tape.

A :class:`Tensor` is a thin wrapper around a numpy array.  Operations in
:mod:`dfeianet.ops` record a :class:`Node` on the active :class:`Tape`
whenever at least one input needs a gradient.  ``backward`` walks the tape
in exact reverse order and accumulates into ``.grad``.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import UsageError

DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64

_state = threading.local()


def _current_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


class Tensor:
    """Immutable-by-convention n-d array with optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; the real work lives in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.scale(_as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class Parameter(Tensor):
    """Learnable tensor with a named, always-allocated gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return self

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def assign(self, new: np.ndarray) -> None:
        new = np.asarray(new, dtype=self.data.dtype)
        if new.shape != self.data.shape:
            raise UsageError(f"{self.name}: cannot assign shape {new.shape} to {self.data.shape}")
        self.data = new
        if self.grad.dtype != new.dtype:
            self.grad = self.grad.astype(new.dtype)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; ops executed inside the block are recorded.
    """

    nodes: list[Node] = field(default_factory=list)
    _prev: "Tape | None" = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._prev = _current_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, visit: Callable[[Node], None] | None = None) -> None:
        backward(loss, self, visit=visit)


@contextlib.contextmanager
def no_grad():
    """Suspend recording, e.g. for evaluation."""
    prev = _current_tape()
    _state.tape = None
    try:
        yield
    finally:
        _state.tape = prev


def record(op: str, inputs: Iterable[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out_data`` and, if needed, log the op on the active tape."""
    inputs = tuple(inputs)
    out = Tensor(out_data)
    tape = _current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(Node(op, inputs, out, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape | None = None, visit=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients add to whatever is already stored; call ``zero_grad`` on
    parameters between optimizer steps.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else loss._tape
    if tape is None or loss._tape is not tape:
        raise UsageError("backward called on a tensor that was not produced under this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        if visit is not None:
            visit(node)
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._tape is tape:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            else:
                # leaf: parameter or user-marked input
                gi = np.asarray(gi, dtype=t.data.dtype)
                t.grad = gi.copy() if t.grad is None else t.grad + gi


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
