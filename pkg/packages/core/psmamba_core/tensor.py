"""
psmamba_core.tensor
~~~~~~~~~~~~~~~~~~~
Dense tensor carrier with reverse-mode differentiation, plus the global
numeric modes every other module reads.

A :class:`Tensor` wraps a contiguous numpy array in the current precision.
Operations build a graph by calling :func:`make_node` with their parents and
a backward closure; :meth:`Tensor.backward` walks the graph in reverse
topological order and accumulates ``grad`` on every node that requires it.

Global modes
------------
precision
    ``float64`` for gradcheck / oracle paths, ``float32`` for training.
    Tensors are cast on creation; the mode is process-wide.
deterministic
    Disables every source of parallelism (JIT thread pool, batch prefetch,
    concurrent restore jobs).
no_grad
    Suspends graph recording for inference and finite differences.
MAC counting
    Ops that perform multiply-adds report them to :func:`count_macs` when a
    counting context is active.
"""

from __future__ import annotations

import contextlib
import threading
from collections.abc import Callable, Iterator, Sequence
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, DTypeLike, NDArray

from psmamba_core.config import settings

Array = NDArray[np.floating[Any]]
BackwardFn = Callable[[Array], Sequence[Array | None]]

# ---------------------------------------------------------------------------
# Precision
# ---------------------------------------------------------------------------

_PRECISIONS: dict[str, type[np.floating[Any]]] = {"float32": np.float32, "float64": np.float64}
_dtype: type[np.floating[Any]] = _PRECISIONS[settings.PRECISION]


def get_dtype() -> type[np.floating[Any]]:
    """Return the numpy dtype of the current precision mode."""
    return _dtype


def set_precision(name: str) -> None:
    """Switch the global precision mode ("float32" or "float64")."""
    global _dtype  # noqa: PLW0603
    try:
        _dtype = _PRECISIONS[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; expected float32 or float64") from None


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the precision mode."""
    previous = np.dtype(_dtype).name
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


# ---------------------------------------------------------------------------
# Deterministic mode
# ---------------------------------------------------------------------------

_deterministic: bool = settings.DETERMINISTIC


def is_deterministic() -> bool:
    return _deterministic


def set_deterministic(flag: bool) -> None:
    """Enable or disable deterministic (single-threaded) execution."""
    global _deterministic  # noqa: PLW0603
    _deterministic = flag
    from psmamba_core import kernels

    kernels.configure_threads(1 if flag else settings.NUM_THREADS)


@contextlib.contextmanager
def deterministic(flag: bool = True) -> Iterator[None]:
    previous = _deterministic
    set_deterministic(flag)
    try:
        yield
    finally:
        set_deterministic(previous)


# ---------------------------------------------------------------------------
# Graph recording
# ---------------------------------------------------------------------------

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording a graph (inference, finite differences)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


# ---------------------------------------------------------------------------
# MAC counting
# ---------------------------------------------------------------------------


class MacCounter:
    """Accumulates multiply-add counts reported by ops."""

    def __init__(self) -> None:
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, count: int) -> None:
        self.total += count
        self.by_op[op] = self.by_op.get(op, 0) + count


_counters = threading.local()


def record_macs(op: str, count: int) -> None:
    """Report ``count`` multiply-adds performed by ``op`` to active counters."""
    for counter in getattr(_counters, "stack", ()):
        counter.add(op, int(count))


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Count multiply-adds performed inside the block.

    Example::

        with count_macs() as macs:
            hierarchy_forward(x, params, task)
        print(macs.total)
    """
    counter = MacCounter()
    stack = getattr(_counters, "stack", None)
    if stack is None:
        stack = _counters.stack = []
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """A dense real array with an optional gradient and graph links."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        name: str = "",
        dtype: DTypeLike | None = None,
    ) -> None:
        self.data: Array = np.ascontiguousarray(data, dtype=dtype or _dtype)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # -- basic properties ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> Array:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"

    # -- differentiation ----------------------------------------------------

    def backward(self, grad: ArrayLike | None = None) -> None:
        """Accumulate gradients of ``sum(grad * self)`` into every leaf.

        ``grad`` defaults to ones, which for a scalar loss is d(loss)/d(loss).
        Intermediate node gradients are released once propagated.
        """
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
        if seed.shape != self.data.shape:
            from psmamba_core.errors import ShapeError

            raise ShapeError(
                f"backward seed shape {seed.shape} does not match tensor shape {self.shape}",
                expected=self.shape,
                actual=tuple(seed.shape),
            )

        order = _topological_order(self)
        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads, strict=True):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            node.grad = None


def _topological_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS over nodes that require gradients."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def make_node(data: Array, parents: Sequence[Tensor], backward: BackwardFn, name: str = "") -> Tensor:
    """Wrap an op result as a graph node.

    ``backward`` receives the output gradient and returns one gradient (or
    None) per parent, in order. The node only joins the graph when some
    parent requires a gradient.
    """
    out = Tensor(data, dtype=data.dtype, name=name)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(value: Tensor | ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike, name: str = "") -> Tensor:
    """Create a learnable leaf tensor in the current precision."""
    return Tensor(data, requires_grad=True, name=name)
