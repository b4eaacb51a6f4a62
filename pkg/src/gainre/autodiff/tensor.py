"""Dense float64 tensors and the tape that records operations on them.

Operations only record themselves while a :class:`Tape` is active::

    with Tape() as tape:
        loss = ops.sum(ops.mul(x, y))
    tape.backward(loss)

Outside a tape every op is a plain numpy computation, which is what
inference uses.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ArgumentError, TapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "gainre_active_tape", default=None
)


class Tensor:
    """A dense array of 64-bit floats with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None

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
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._node is None:
            raise TapeError("tensor was not produced by a recorded operation")
        self._node.tape.backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; the real work lives in ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


@dataclass
class _Node:
    tape: "Tape"
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


@dataclass
class Tape:
    """Ordered record of primitive operations for one forward pass."""

    nodes: list[_Node] = field(default_factory=list)
    spent: bool = False
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        if self.spent:
            raise TapeError("tape already consumed by backward; start a new one")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn, op: str) -> None:
        if self.spent:
            raise TapeError("cannot record onto a consumed tape")
        node = _Node(self, output, inputs, backward, op)
        output._node = node
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(.) to every leaf tensor with ``requires_grad``.

        Leaf gradients are accumulated into ``.grad`` so several tapes can
        contribute to one optimizer step.
        """
        if self.spent:
            raise TapeError("backward already ran on this tape; run a new forward pass")
        if loss.size != 1:
            raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes or loss._node is None or loss._node.tape is not self:
            raise TapeError("loss was not recorded on this tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            input_grads = node.backward(g)
            for inp, ig in zip(node.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if inp._node is not None and inp._node.tape is self:
                    key = id(inp)
                    if key in pending:
                        pending[key] = pending[key] + ig
                    else:
                        pending[key] = ig
                elif inp.grad is None:
                    inp.grad = np.array(ig, dtype=np.float64, copy=True)
                else:
                    inp.grad += ig

        # Drop saved activations; intermediate tensors become plain leaves.
        for node in self.nodes:
            node.output._node = None
        self.nodes.clear()
        self.spent = True


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
