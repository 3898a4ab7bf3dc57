"""Dense 2-D reverse-mode autodiff on float64 numpy matrices.

Every value is a 2-D ``float64`` array. Operations executed inside an active
:class:`Tape` are recorded in execution order; :meth:`Tape.backward` walks
that record in exact reverse order and accumulates gradients into every node
whose ``requires_grad`` flag is set. Outside a tape the same operations just
compute values, which is what inference uses.

    >>> W = leaf([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    >>> x = leaf([[5.0], [6.0]])
    >>> with Tape() as tape:
    ...     loss = sum_all(matmul(W, x))
    ...     tape.backward(loss)
    >>> W.grad.tolist()
    [[5.0, 6.0], [5.0, 6.0]]
"""

from __future__ import annotations

from contextvars import ContextVar
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, DimensionError, TapeStateError

_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("stagelora_active_tape", default=None)


def as_matrix(data) -> np.ndarray:
    """Coerce ``data`` to a fresh 2-D float64 array (1-D input becomes a column)."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Node:
    """A matrix value in the computation graph plus its accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "name", "tape", "_backward")

    def __init__(
        self,
        value: np.ndarray,
        requires_grad: bool = False,
        parents: tuple["Node", ...] = (),
        name: str | None = None,
    ):
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad
        self.parents = parents
        self.name = name
        self.tape: Tape | None = None
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.requires_grad:
            self.grad += g

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations run inside the ``with`` block are
    recorded here. A tape may be run backward once; call :meth:`reset` to
    reuse it.
    """

    def __init__(self) -> None:
        self.records: list[Node] = []
        self._consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, node: Node) -> None:
        if self._consumed:
            raise TapeStateError("tape already ran backward; reset() before recording again")
        node.tape = self
        self.records.append(node)

    def reset(self) -> None:
        self.records = []
        self._consumed = False

    def backward(self, loss: Node) -> None:
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
        if self._consumed:
            raise TapeStateError("backward already ran on this tape; call reset() first")
        if not self.records:
            raise TapeStateError("backward on an empty tape")
        if loss.tape is not self:
            raise TapeStateError("loss was not produced on this tape")
        self._consumed = True
        loss.grad = loss.grad + 1.0
        for node in reversed(self.records):
            node._backward(node.grad)


def leaf(data, requires_grad: bool = False, name: str | None = None) -> Node:
    return Node(as_matrix(data), requires_grad=requires_grad, name=name)


def backward(loss: Node) -> None:
    """Backpropagate from a scalar ``loss`` through the tape that produced it."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    if loss.tape is None:
        raise TapeStateError("loss was not recorded on any tape")
    loss.tape.backward(loss)


def _emit(value: np.ndarray, parents: tuple[Node, ...], fn) -> Node:
    requires = any(p.requires_grad for p in parents)
    out = Node(value, requires_grad=requires, parents=parents)
    tape = _ACTIVE_TAPE.get()
    if requires and tape is not None:
        out._backward = fn
        tape.record(out)
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def _back(g: np.ndarray) -> None:
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)

    return _emit(a.value @ b.value, (a, b), _back)


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def _back(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(g)

    return _emit(a.value + b.value, (a, b), _back)


def scale(a: Node, factor: float) -> Node:
    """Multiply by a constant scalar (the only broadcast supported)."""
    factor = float(factor)

    def _back(g: np.ndarray) -> None:
        a._accumulate(factor * g)

    return _emit(factor * a.value, (a,), _back)


def relu(a: Node) -> Node:
    mask = a.value > 0.0  # subgradient 0 at exactly 0

    def _back(g: np.ndarray) -> None:
        a._accumulate(np.where(mask, g, 0.0))

    return _emit(np.where(mask, a.value, 0.0), (a,), _back)


def sum_all(a: Node) -> Node:
    def _back(g: np.ndarray) -> None:
        a._accumulate(np.full_like(a.value, g[0, 0]))

    return _emit(np.array([[a.value.sum()]]), (a,), _back)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def softmax_cross_entropy(logits: Node, label: int) -> Node:
    """Return ``-log softmax(logits)[label]`` as a 1x1 node."""
    rows, cols = logits.shape
    if rows != 1 and cols != 1:
        raise DimensionError(f"logits must be 1xC or Cx1, got {logits.shape}")
    n_classes = rows * cols
    if not 0 <= label < n_classes:
        raise IndexError(f"label {label} out of range for {n_classes} classes")
    logp = log_softmax(logits.value.reshape(-1))
    probs = np.exp(logp)

    def _back(g: np.ndarray) -> None:
        d = probs.copy()
        d[label] -= 1.0
        logits._accumulate(g[0, 0] * d.reshape(logits.shape))

    return _emit(np.array([[-logp[label]]]), (logits,), _back)
