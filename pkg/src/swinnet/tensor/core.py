"""Tensor container and the gradient tape that records primitive ops."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}


class InvalidArgument(ValueError):
    """Raised on shape or argument contract violations."""


class NumericDomainError(ArithmeticError):
    """Raised when an op meets NaN/inf where finite values are required."""


def _as_dtype(dtype) -> np.dtype:
    if dtype is None:
        return None
    if isinstance(dtype, str) and dtype in DTYPES:
        return np.dtype(DTYPES[dtype])
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise InvalidArgument(f"unsupported dtype {dt}; use f32 or f64")
    return dt


class Tensor:
    """Dense row-major array with optional tape linkage.

    ``requires_grad`` marks leaves (parameters, or inputs under test) whose
    gradient the tape should report. ``tape_id`` is set when the tensor is
    the output of an op recorded on a tape.
    """

    __slots__ = ("data", "requires_grad", "tape_id", "name", "__weakref__")

    def __init__(self, data, dtype=None, requires_grad: bool = False, name: Optional[str] = None):
        dt = _as_dtype(dtype)
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dt is None:
            dt = arr.dtype if arr.dtype in (np.float32, np.float64) else np.dtype(np.float64)
        arr = np.ascontiguousarray(arr, dtype=dt)
        if arr.ndim > 0 and min(arr.shape) < 1:
            raise InvalidArgument(f"all extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.tape_id: Optional[int] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _wrap(other, self))

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, x, dtype=like.dtype))


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    vjp: VJP


_tape_ids = itertools.count(1)
_active: list["GradTape"] = []


@dataclass
class GradTape:
    """Records ops executed inside ``with GradTape() as tape:``.

    A tape is single-use and single-threaded: record one forward pass, call
    :func:`backward` once, then drop it.
    """

    nodes: list = field(default_factory=list)
    gradients: dict = field(default_factory=dict)
    id: int = field(default_factory=lambda: next(_tape_ids))

    def __post_init__(self):
        self._tracked: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "GradTape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def tracks(self, t: Tensor) -> bool:
        if t.requires_grad:
            return True
        return id(t) in self._tracked

    def record(self, kind: str, inputs: tuple, output: Tensor, vjp: VJP) -> None:
        for t in inputs:
            if t.requires_grad and id(t) not in self._tracked:
                self._tracked.add(id(t))
                self._leaves[id(t)] = t
        if output.tape_id is not None and output.tape_id != self.id:
            raise InvalidArgument("tensor already belongs to another tape")
        output.tape_id = self.id
        self._tracked.add(id(output))
        self.nodes.append(Node(kind, inputs, output, vjp))

    def grad(self, t: Tensor) -> Optional[np.ndarray]:
        return self.gradients.get(id(t))

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list:
        """Run backward and return gradients for ``sources`` (zeros if unreachable)."""
        grads = backward(self, loss)
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def active_tape() -> Optional[GradTape]:
    return _active[-1] if _active else None


def record(kind: str, inputs: tuple, out_data: np.ndarray, vjp: VJP) -> Tensor:
    """Wrap ``out_data`` and record the op if any input is tracked."""
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape.record(kind, inputs, out, vjp)
    return out


def backward(tape: GradTape, loss: Tensor) -> dict:
    """Reverse-mode sweep from a scalar ``loss``; returns {id(tensor): grad}."""
    if loss.size != 1:
        raise InvalidArgument(f"loss must be scalar, got shape {loss.shape}")
    if not tape.tracks(loss):
        raise InvalidArgument("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        in_grads = node.vjp(g)
        if not node.output.requires_grad:
            del grads[id(node.output)]
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not tape.tracks(t):
                continue
            if gi.shape != t.shape:
                raise AssertionError(f"{node.kind}: grad shape {gi.shape} != input shape {t.shape}")
            k = id(t)
            if k in grads:
                grads[k] = grads[k] + gi
            else:
                grads[k] = gi.astype(t.dtype, copy=False)
    tape.gradients = grads
    return grads
