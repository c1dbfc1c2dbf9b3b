"""Dense tensors and the tape-based computation graph.

Operations record themselves into the *active* :class:`Graph` (see
:func:`Graph.recording`).  ``backward`` walks the tape in strict reverse
insertion order, so gradient accumulation is deterministic for a fixed graph.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np

_DTYPES = {"float32": np.float32, "float64": np.float64}

_state = {"dtype": np.float32, "checked": False, "deterministic": True}


class NumericsError(ValueError):
    """Shape mismatch, non-finite value in checked mode, or a bad graph."""


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise NumericsError(f"unknown precision {name!r}; expected float32 or float64")
    _state["dtype"] = _DTYPES[name]


def get_dtype() -> type:
    return _state["dtype"]


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    old = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = old


def set_checked(flag: bool) -> None:
    _state["checked"] = bool(flag)


def is_checked() -> bool:
    return _state["checked"]


@contextlib.contextmanager
def checked(flag: bool = True) -> Iterator[None]:
    old = _state["checked"]
    _state["checked"] = bool(flag)
    try:
        yield
    finally:
        _state["checked"] = old


def set_deterministic(flag: bool) -> None:
    _state["deterministic"] = bool(flag)


def is_deterministic() -> bool:
    return _state["deterministic"]


class Tensor:
    """A dense row-major array plus autograd bookkeeping.

    Equality is identity (tensors are used as dictionary keys for gradients),
    so ``==`` is intentionally not overloaded.
    """

    __slots__ = ("data", "requires_grad", "graph", "node", "name")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None,
                 dtype: type | None = None):
        arr = np.array(data, dtype=dtype or _state["dtype"], copy=True, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = requires_grad
        self.graph: Graph | None = None
        self.node: int | None = None
        self.name = name
        if _state["checked"]:
            _check_finite(arr, name or "tensor")

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.graph = None
        t.node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericsError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; all shapes must match exactly
    def __add__(self, other: "Tensor") -> "Tensor":
        from .ops import add
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from .ops import sub
        return sub(self, other)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        from .ops import mul, scale
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def tensor(data: Any, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite value produced by {what}")


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: VJP
    attrs: dict[str, Any] = field(default_factory=dict)


_active: contextvars.ContextVar["Graph | None"] = contextvars.ContextVar("active_graph", default=None)


class Graph:
    """Append-only tape of op records."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    @contextlib.contextmanager
    def recording(self) -> Iterator["Graph"]:
        token = _active.set(self)
        try:
            yield self
        finally:
            _active.reset(token)


def active_graph() -> Graph | None:
    return _active.get()


def emit(kind: str, inputs: Sequence[Tensor], out: np.ndarray, vjp: VJP, **attrs: Any) -> Tensor:
    """Wrap an op result and, when any input needs a gradient, record it."""
    if _state["checked"]:
        _check_finite(out, kind)
    result = Tensor._wrap(out)
    graph = _active.get()
    if graph is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.graph = graph
        result.node = len(graph.nodes)
        graph.nodes.append(Node(kind, tuple(inputs), result, vjp, attrs))
    return result


def backward(graph: Graph, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every ``requires_grad`` leaf.

    Returns a fresh dict each call; nothing is accumulated on the tensors, so
    calling this twice on the same graph gives bit-identical results.
    """
    if loss.size != 1:
        raise NumericsError(f"loss must be scalar, got shape {loss.shape}")
    if loss.graph is not graph or loss.node is None:
        raise NumericsError("loss is not attached to this graph")

    pending: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for idx in range(loss.node, -1, -1):
        g = pending.pop(idx, None)
        if g is None:
            continue
        node = graph.nodes[idx]
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.graph is graph and inp.node is not None:
                prev = pending.get(inp.node)
                pending[inp.node] = gi if prev is None else prev + gi
            else:
                prev = leaves.get(inp)
                leaves[inp] = gi if prev is None else prev + gi
    return leaves
