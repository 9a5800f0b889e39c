"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`Graph` is a Wengert list: every call to :meth:`Graph.record` runs
the forward rule of an op, appends a node, and returns the output tensor.
:meth:`Graph.backward` walks the list once in reverse.

Dropout masks come from :class:`RngStream`, a counter-based Philox stream
keyed by ``(seed, stream_id)`` so the same key replays the same draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

DIVERGENCE_EPS = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """Immutable dense float64 array with an optional producing node."""

    __slots__ = ("value", "name", "_node", "__weakref__")

    def __init__(self, value, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        arr.setflags(write=False)
        self.value = arr
        self.name = name
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"tensor of shape {self.shape} is not scalar")
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


@dataclass
class Node:
    kind: str
    operands: tuple[Tensor, ...]
    output: Tensor
    saved: object
    attrs: dict


# ---------------------------------------------------------------------------
# op table: kind -> (check, forward, backward)
#   forward(values, attrs) -> (output array, saved)
#   backward(grad, values, out, saved, attrs) -> tuple of operand grads


def _shape_err(kind: str, *shapes) -> ShapeError:
    return ShapeError(f"{kind}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes))


def _check_matmul(kind, shapes, attrs):
    a, b = shapes
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        raise _shape_err(kind, a, b)


def _check_bias(kind, shapes, attrs):
    a, b = shapes
    if len(a) != 2 or len(b) != 1 or a[1] != b[0]:
        raise _shape_err(kind, a, b)


def _check_same(kind, shapes, attrs):
    first = shapes[0]
    for s in shapes[1:]:
        if s != first:
            raise _shape_err(kind, first, s)


def _check_matrix(kind, shapes, attrs):
    if len(shapes[0]) != 2 or shapes[0][1] < 1:
        raise ShapeError(f"{kind}: expected a non-empty 2-D operand, got shape {tuple(shapes[0])}")


def _check_any(kind, shapes, attrs):
    pass


def _check_passes(kind, shapes, attrs):
    if len(shapes) < 2:
        raise ShapeError(f"{kind}: needs at least two passes, got {len(shapes)}")
    _check_same(kind, shapes, attrs)
    _check_matrix(kind, shapes, attrs)


def _stack_probs(values):
    return np.exp(np.stack(values))


def _fwd_xdiv(values, attrs):
    p = _stack_probs(values)
    value, grad_p = kernels.x_divergence(p, attrs.get("eps", DIVERGENCE_EPS))
    # chain through p = exp(log p)
    return np.array(value), grad_p * p


def _fwd_js(values, attrs):
    p = _stack_probs(values)
    value, grad_p = kernels.js_divergence(p, attrs.get("eps", DIVERGENCE_EPS))
    return np.array(value), grad_p * p


def _bwd_stacked(g, values, out, saved, attrs):
    return tuple(g * saved[i] for i in range(len(values)))


def _fwd_log_softmax(values, attrs):
    out = kernels.log_softmax(np.ascontiguousarray(values[0]))
    return out, None


_OPS: dict[str, tuple[Callable, Callable, Callable]] = {
    "matmul": (
        _check_matmul,
        lambda v, a: (v[0] @ v[1], None),
        lambda g, v, o, s, a: (g @ v[1].T, v[0].T @ g),
    ),
    "add-bias": (
        _check_bias,
        lambda v, a: (v[0] + v[1], None),
        lambda g, v, o, s, a: (g, g.sum(axis=0)),
    ),
    "relu": (
        _check_any,
        lambda v, a: (np.maximum(v[0], 0.0), None),
        lambda g, v, o, s, a: (g * (v[0] > 0.0),),
    ),
    "log-softmax": (
        _check_matrix,
        _fwd_log_softmax,
        lambda g, v, o, s, a: (kernels.log_softmax_backward(o, np.ascontiguousarray(g)),),
    ),
    "multiply": (
        _check_same,
        lambda v, a: (v[0] * v[1], None),
        lambda g, v, o, s, a: (g * v[1], g * v[0]),
    ),
    "add": (
        _check_same,
        lambda v, a: (v[0] + v[1], None),
        lambda g, v, o, s, a: (g, g),
    ),
    "subtract": (
        _check_same,
        lambda v, a: (v[0] - v[1], None),
        lambda g, v, o, s, a: (g, -g),
    ),
    "square": (
        _check_any,
        lambda v, a: (v[0] * v[0], None),
        lambda g, v, o, s, a: (2.0 * v[0] * g,),
    ),
    "sum": (
        _check_any,
        lambda v, a: (np.array(v[0].sum()), None),
        lambda g, v, o, s, a: (np.full(v[0].shape, float(g)),),
    ),
    "mean": (
        _check_any,
        lambda v, a: (np.array(v[0].mean()), None),
        lambda g, v, o, s, a: (np.full(v[0].shape, float(g) / max(v[0].size, 1)),),
    ),
    "scale": (
        _check_any,
        lambda v, a: (v[0] * a["factor"], None),
        lambda g, v, o, s, a: (g * a["factor"],),
    ),
    "x-divergence": (_check_passes, _fwd_xdiv, _bwd_stacked),
    "js-divergence": (_check_passes, _fwd_js, _bwd_stacked),
}

OP_KINDS = tuple(_OPS)


class Graph:
    """Append-only tape of recorded operations."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def leaf(self, value, name: str | None = None) -> Tensor:
        return Tensor(value, name=name)

    def record(self, kind: str, *operands: Tensor, **attrs) -> Tensor:
        try:
            check, forward, _ = _OPS[kind]
        except KeyError:
            raise ValueError(f"unsupported op kind {kind!r}") from None
        check(kind, [t.shape for t in operands], attrs)
        values = [t.value for t in operands]
        with np.errstate(all="ignore"):
            out_value, saved = forward(values, attrs)
        out = Tensor(out_value)
        if not np.all(np.isfinite(out.value)):
            raise NonFiniteError(f"{kind}: non-finite output")
        node = Node(kind, tuple(operands), out, saved, attrs)
        out._node = node
        self.nodes.append(node)
        return out

    # convenience wrappers
    def matmul(self, a, b):
        return self.record("matmul", a, b)

    def add_bias(self, a, b):
        return self.record("add-bias", a, b)

    def relu(self, a):
        return self.record("relu", a)

    def log_softmax(self, a):
        return self.record("log-softmax", a)

    def multiply(self, a, b):
        return self.record("multiply", a, b)

    def add(self, a, b):
        return self.record("add", a, b)

    def subtract(self, a, b):
        return self.record("subtract", a, b)

    def square(self, a):
        return self.record("square", a)

    def sum(self, a):
        return self.record("sum", a)

    def mean(self, a):
        return self.record("mean", a)

    def scale(self, a, factor: float):
        return self.record("scale", a, factor=float(factor))

    def backward(self, root: Tensor, wrt: Sequence[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
        """Gradients of scalar ``root`` with respect to leaf tensors.

        With ``wrt`` given, the map has exactly those tensors as keys, with
        zero arrays for any not reachable from ``root``. Otherwise every
        leaf operand recorded on this graph gets an entry.
        """
        if root.value.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            for t in node.operands:
                if t.is_leaf:
                    leaves.setdefault(id(t), t)
            if g is None:
                continue
            _, _, backward = _OPS[node.kind]
            values = [t.value for t in node.operands]
            local = backward(g, values, node.output.value, node.saved, node.attrs)
            for t, lg in zip(node.operands, local):
                lg = np.asarray(lg, dtype=np.float64).reshape(t.shape)
                prev = grads.get(id(t))
                grads[id(t)] = lg if prev is None else prev + lg
        targets: Iterable[Tensor] = wrt if wrt is not None else leaves.values()
        result: dict[Tensor, np.ndarray] = {}
        for t in targets:
            g = grads.get(id(t))
            if g is None:
                g = np.zeros(t.shape)
            elif not np.all(np.isfinite(g)):
                raise NonFiniteError(f"backward: non-finite gradient for {t!r}")
            result[t] = g
        return result


# ---------------------------------------------------------------------------
# randomness


@dataclass
class RngStream:
    """Counter-based uniform stream keyed by ``(seed, stream_id)``.

    ``counter`` is the number of 64-bit words already consumed; constructing
    a stream with a nonzero counter resumes at that position.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0
    _bitgen: np.random.Philox | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {v}")
        if self.counter < 0:
            raise ValueError("counter must be nonnegative")

    def _generator(self) -> np.random.Philox:
        if self._bitgen is None:
            bg = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
            blocks, rest = divmod(self.counter, 4)
            bg.advance(blocks)
            if rest:
                bg.random_raw(rest)
            self._bitgen = bg
        return self._bitgen

    def raw(self, n: int) -> np.ndarray:
        words = np.asarray(self._generator().random_raw(n), dtype=np.uint64)
        self.counter += n
        return words

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) built from the top 53 bits of each word."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def stream_id(step: int, pass_index: int) -> int:
    """Stream id for the dropout masks of one pass of one training step."""
    if not 0 <= pass_index < 256:
        raise ValueError("pass index must be in [0, 256)")
    return (step << 8) | pass_index


@dataclass(frozen=True)
class DropoutMask:
    keep: np.ndarray
    rate: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.keep.shape

    @property
    def factor(self) -> float:
        return 1.0 / (1.0 - self.rate)

    def scaled(self) -> np.ndarray:
        return self.keep * self.factor


def draw_mask(rng: RngStream, shape: Sequence[int], rate: float) -> DropoutMask:
    if not (0.0 <= rate < 1.0) or math.isnan(rate):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    shape = tuple(int(s) for s in shape)
    n = math.prod(shape)
    keep = rng.uniform(n) >= rate
    keep.setflags(write=False)
    return DropoutMask(keep.reshape(shape), float(rate))
