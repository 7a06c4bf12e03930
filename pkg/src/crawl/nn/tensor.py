"""Tensors with gradient buffers and a tape of per-kernel backward closures.

Every kernel takes its inputs as :class:`Tensor` (or plain arrays for
constants), computes the forward value with numpy and, when a
:class:`Tape` is supplied, records a closure that pushes ``out.grad`` back
into the inputs. ``Tape.backward`` replays the closures in reverse.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

CHECK_FINITE = True


class NumericalFault(FloatingPointError):
    """A kernel produced NaN or Inf."""


class Tensor:
    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str | None = None):
        self.value = np.asarray(value)
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray, owned: bool = False) -> None:
        """Add ``g`` into the gradient buffer.

        ``owned=True`` lets the buffer adopt ``g`` without copying; only pass it
        for freshly allocated arrays nobody else references.
        """
        if self.grad is None:
            if owned and g.dtype == self.value.dtype and g.shape == self.value.shape:
                self.grad = g
            else:
                self.grad = np.array(np.broadcast_to(g, self.value.shape), dtype=self.value.dtype)
        else:
            self.grad += g

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


class Tape:
    """Ordered record of backward closures for one forward pass."""

    def __init__(self) -> None:
        self._ops: list[Callable[[], None]] = []

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def backward(self, out: Tensor, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if out.value.size != 1:
                raise ValueError("backward without an explicit gradient needs a scalar output")
            grad = np.ones_like(out.value)
        out.grad = np.asarray(grad, dtype=out.value.dtype)
        for fn in reversed(self._ops):
            fn()
        self._ops.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def checked(value: np.ndarray, op: str) -> np.ndarray:
    if CHECK_FINITE and not np.isfinite(value).all():
        raise NumericalFault(f"non-finite values produced by {op}")
    return value
