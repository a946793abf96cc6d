"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a C-contiguous float64 ndarray plus an optional
gradient buffer. Operations (see ``ops.py``) record backward closures
onto the active ``Tape`` while a ``with Tape() as tape:`` block is
open; ``backward(loss, tape)`` replays the closures in reverse
recorded order, which is a valid topological order because the tape
records in execution order. Gradients accumulate additively, so a
tensor used twice receives the sum of both path gradients.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GradientError(RuntimeError):
    """Tape misuse: non-scalar loss, or backward on a spent tape."""


class Tensor:
    """N-dimensional float64 array, optionally participating in autodiff."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to 1-d
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Small operator sugar; the full op set lives in ops.py.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def parameter(data) -> Tensor:
    """A trainable leaf tensor (requires_grad=True)."""
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of forward operations for one backward replay.

    Each entry is a closure that reads the output tensor's gradient and
    accumulates into the inputs' gradients. A tape can be replayed
    exactly once; re-run the forward pass under a fresh tape to
    differentiate again.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self._entries: list = []
        self._spent = False

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = Tape._stack.pop()
        assert popped is self

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, backward_fn) -> None:
        self._entries.append(backward_fn)

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate gradients of every requires_grad tensor reachable from loss."""
    if loss.data.shape != ():
        raise GradientError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if tape._spent:
        raise GradientError("tape already replayed; re-record the forward pass")
    tape._spent = True
    loss.accumulate_grad(np.ones((), dtype=np.float64))
    for entry in reversed(tape._entries):
        entry()


def no_tape_active() -> bool:
    return Tape.current() is None
