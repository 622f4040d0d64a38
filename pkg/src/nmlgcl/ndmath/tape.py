"""Define-by-run reverse-mode tape over 2-D float64 arrays."""

from __future__ import annotations

from collections import Counter
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, NumericError, ShapeError


class Tensor:
    """A 2-D float64 value, optionally recorded on a :class:`Tape`.

    Tensors with ``tape=None`` are constants: operations on them are
    evaluated eagerly and nothing is recorded.
    """

    __slots__ = ("value", "tape", "index", "name", "__weakref__")

    def __init__(self, value, tape: Optional["Tape"] = None, index: int = -1, name=None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {v.shape}")
        self.value = v
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __float__(self):
        return self.item()

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.index}"
        return f"Tensor(shape={self.shape}, {tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations.

    Each record holds the input tensors, the output node index and a
    backward rule mapping the output cotangent to one cotangent per input
    (``None`` where the input needs no gradient).
    """

    def __init__(self, checked: bool = False):
        self.checked = checked
        self._values: list = []
        self._leaves: list = []
        self._records: list = []
        self.events: Counter = Counter()

    def __len__(self):
        return len(self._values)

    def leaf(self, value, name=None) -> Tensor:
        t = Tensor(value, self, len(self._values), name)
        self._values.append(t)
        self._leaves.append(t)
        return t

    def record(self, value, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
        if self.checked and not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite output from {getattr(backward, '__qualname__', 'op')}")
        t = Tensor(value, self, len(self._values))
        self._values.append(t)
        self._records.append((t.index, tuple(inputs), backward))
        return t

    @property
    def leaves(self) -> list:
        return list(self._leaves)

    def backward(self, loss: Tensor) -> dict:
        """Gradients of a scalar ``loss`` for every leaf on this tape.

        Leaves that do not influence the loss get zero arrays.
        """
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list = [None] * len(self._values)
        grads[loss.index] = np.ones_like(loss.value)
        for out_idx, inputs, rule in reversed(self._records):
            if out_idx > loss.index:
                continue
            g = grads[out_idx]
            if g is None:
                continue
            contributions = rule(g)
            for inp, c in zip(inputs, contributions):
                if c is None or inp.tape is not self:
                    continue
                if c.shape != inp.value.shape:
                    raise ShapeError(
                        f"backward rule produced {c.shape} for input of shape {inp.value.shape}"
                    )
                if grads[inp.index] is None:
                    grads[inp.index] = np.array(c, dtype=np.float64, copy=True)
                else:
                    grads[inp.index] += c
        return {
            leaf: (grads[leaf.index] if grads[leaf.index] is not None else np.zeros_like(leaf.value))
            for leaf in self._leaves
        }


def tape_of(*tensors) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands live on different tapes")
            tape = t.tape
    return tape


def backward(tape: Tape, loss: Tensor) -> dict:
    return tape.backward(loss)
