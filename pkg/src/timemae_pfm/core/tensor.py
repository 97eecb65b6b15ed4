"""Dense float64 tensors and the gradient tape that records operations on them."""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NumericError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class Tensor:
    """A float64 array, optionally marked as a trainable leaf.

    Arithmetic operators dispatch to :mod:`timemae_pfm.core.ops`, so any
    expression built while a :class:`Tape` is active is differentiable.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
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
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar; ops imports Tensor so the import is deferred
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

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Entry:
    __slots__ = ("op", "out", "inputs", "vjp")

    def __init__(self, op, out, inputs, vjp):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording; values computed inside are constants to any tape."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; every op on a watched tensor (a leaf with
    ``requires_grad`` or an output of a recorded op) appends one entry.
    :meth:`backward` replays the log in reverse exactly once and then
    clears it.
    """

    def __init__(self):
        self.entries: list[_Entry] = []
        self._produced: set[int] = set()
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.entries)

    def watches(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced

    def record(self, op: str, out: Tensor, inputs: tuple[Tensor, ...], vjp: VJP) -> None:
        self.entries.append(_Entry(op, out, inputs, vjp))
        self._produced.add(id(out))

    def backward(self, loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
        """Return d(loss)/d(param) for every named parameter.

        Parameters the loss does not depend on get an exactly-zero array.
        """
        if self.consumed:
            raise RuntimeError("tape already consumed by a previous backward()")
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.out), None)
            if g is None:
                continue
            in_grads = entry.vjp(g)
            for inp, gi in zip(entry.inputs, in_grads):
                if gi is None or not self.watches(inp):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = {}
        for name, p in params.items():
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            out[name] = np.asarray(g, dtype=np.float64).reshape(p.shape)
        self.entries.clear()
        self._produced.clear()
        self.consumed = True
        return out
