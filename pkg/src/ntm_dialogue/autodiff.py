"""Reverse-mode automatic differentiation over dense numpy tensors.

Only the operations the dialogue architectures need are provided. There is no
implicit broadcasting: every shape change is an explicit operation, so each
backward rule only ever sees the shapes it was written for.
"""

from __future__ import annotations

import contextlib
import logging
from collections.abc import Callable, Iterable, Iterator, Sequence
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any, NamedTuple, Optional, Union

import numpy as np

from .const import COSINE_EPSILON
from .exceptions import ContractError, DimensionError, TokenIndexError

_LOGGER = logging.getLogger(__name__)

_GRAD_ENABLED: ContextVar[bool] = ContextVar("grad_enabled", default=True)


class RowGrad(NamedTuple):
    """Gradient touching a single row of a matrix (embedding lookups)."""

    index: int
    row: np.ndarray


GradValue = Union[np.ndarray, RowGrad, None]
BackwardFn = Callable[[np.ndarray], Sequence[GradValue]]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current context."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    """Return `True` if operations are being recorded."""
    return _GRAD_ENABLED.get()


class Tensor:
    """Shaped array of real scalars with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data: Any,
        *,
        requires_grad: bool = False,
        dtype: np.dtype | type | None = None,
    ) -> None:
        if dtype is None:
            dtype = (
                data.dtype
                if isinstance(data, np.ndarray) and data.dtype.kind == "f"
                else np.float64
            )
        self.data: np.ndarray = np.array(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, "
            f"requires_grad={self.requires_grad})"
        )

    @property
    def shape(self) -> tuple[int, ...]:
        """Return the tensor shape."""
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        """Return the scalar type."""
        return self.data.dtype

    @property
    def ndim(self) -> int:
        """Return the number of axes."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Return the number of scalars."""
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        """Return `True` if the tensor was not produced by an operation."""
        return not self._parents

    def item(self) -> float:
        """Return the value of a one-element tensor."""
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def zero_grad(self) -> None:
        """Reset the gradient accumulator to zeros."""
        self.grad = np.zeros_like(self.data)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def constant(data: Any, dtype: np.dtype | type | None = None) -> Tensor:
    """Create a tensor that never requires a gradient."""
    return Tensor(data, dtype=dtype)


def parameter(data: Any, dtype: np.dtype | type | None = None) -> Tensor:
    """Create a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def _result(
    data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str
) -> Tensor:
    """Wrap an operation result, recording it when any parent needs a gradient."""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=parents[0].dtype)
    out.requires_grad = False
    out.grad = None
    out.op = "leaf"
    out._parents = ()
    out._backward = None
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = parents
        out._backward = backward
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _one_element(op: str, s: Tensor) -> None:
    if s.size != 1:
        raise DimensionError(f"{op}: expected a one-element tensor, got {s.shape}")


# ---------------------------------------------------------------------------
# Linear algebra and elementwise arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of `a[m×k]` with `b[k×n]` or `b[k]`."""
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = np.outer(g, b_data) if b_data.ndim == 1 else g @ b_data.T
        return grad_a, a_data.T @ g

    return _result(a_data @ b_data, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum."""
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference."""
    _same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _result(
        a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data), "mul"
    )


_ELEMENTWISE: dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
}


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Apply `add`, `sub` or `mul` by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError as exception:
        raise ContractError(f"Unknown elementwise operation {op!r}") from exception
    return fn(a, b)


def one_minus(x: Tensor) -> Tensor:
    """Return `1 - x`."""
    return _result(1.0 - x.data, (x,), lambda g: (-g,), "one_minus")


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every element of `x` by the one-element tensor `s`."""
    _one_element("scale", s)
    x_data, s_value = x.data, s.data.reshape(())

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g * s_value, np.sum(g * x_data).reshape(s.shape)

    return _result(x_data * s_value, (x, s), backward, "scale")


def outer(u: Tensor, v: Tensor) -> Tensor:
    """Outer product of two vectors."""
    if u.ndim != 1 or v.ndim != 1:
        raise DimensionError(f"outer: shapes {u.shape} and {v.shape} are not vectors")
    u_data, v_data = u.data, v.data
    return _result(
        np.outer(u_data, v_data),
        (u, v),
        lambda g: (g @ v_data, g.T @ u_data),
        "outer",
    )


def total(x: Tensor) -> Tensor:
    """Sum every element into a scalar."""
    shape = x.shape
    return _result(
        np.sum(x.data).reshape(()),
        (x,),
        lambda g: (np.full(shape, g, dtype=g.dtype),),
        "total",
    )


def reciprocal(x: Tensor) -> Tensor:
    """Elementwise `1 / x`."""
    out = 1.0 / x.data
    return _result(out, (x,), lambda g: (-g * out * out,), "reciprocal")


def power(x: Tensor, gamma: Tensor) -> Tensor:
    """Elementwise `x ** gamma` for `x >= 0` and a one-element exponent."""
    _one_element("power", gamma)
    x_data, exponent = x.data, gamma.data.reshape(())
    out = np.power(x_data, exponent)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_x = g * exponent * np.power(x_data, exponent - 1)
        positive = x_data > 0
        log_x = np.log(np.where(positive, x_data, 1.0))
        grad_gamma = np.sum(g * out * log_x * positive).reshape(gamma.shape)
        return grad_x, grad_gamma

    return _result(out, (x, gamma), backward, "power")


# ---------------------------------------------------------------------------
# Shape operations


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reshape without copying semantics."""
    original = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exception:
        raise DimensionError(
            f"reshape: cannot view {original} as {shape}"
        ) from exception
    return _result(data, (x,), lambda g: (g.reshape(original),), "reshape")


def broadcast_rows(v: Tensor, rows: int) -> Tensor:
    """Stack `rows` copies of vector `v` into a matrix."""
    if v.ndim != 1:
        raise DimensionError(f"broadcast_rows: expected a vector, got {v.shape}")
    if rows < 1:
        raise ContractError(f"broadcast_rows: row count must be positive, got {rows}")
    return _result(
        np.tile(v.data, (rows, 1)),
        (v,),
        lambda g: (np.sum(g, axis=0),),
        "broadcast_rows",
    )


def concat(*tensors: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    if not tensors:
        raise ContractError("concat: nothing to concatenate")
    leading = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or t.shape[:-1] != leading:
            raise DimensionError(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ off the last axis"
            )
    boundaries = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, boundaries, axis=-1)

    return _result(
        np.concatenate([t.data for t in tensors], axis=-1),
        tuple(tensors),
        backward,
        "concat",
    )


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Take `x[..., start:stop]`."""
    if not 0 <= start <= stop <= x.shape[-1]:
        raise DimensionError(f"slice_last: [{start}:{stop}] outside {x.shape}")
    shape, dtype = x.shape, x.dtype

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape, dtype=dtype)
        grad[..., start:stop] = g
        return (grad,)

    return _result(x.data[..., start:stop].copy(), (x,), backward, "slice_last")


def roll(x: Tensor, shift: int) -> Tensor:
    """Circularly rotate a vector so that `out[i] = x[i - shift]`."""
    return _result(
        np.roll(x.data, shift), (x,), lambda g: (np.roll(g, -shift),), "roll"
    )


def embedding(table: Tensor, index: int) -> Tensor:
    """Look up row `index` of an embedding table."""
    rows = table.shape[0]
    if not 0 <= index < rows:
        raise TokenIndexError(f"Token id {index} outside vocabulary of size {rows}")
    return _result(
        table.data[index].copy(),
        (table,),
        lambda g: (RowGrad(index, g),),
        "embedding",
    )


# ---------------------------------------------------------------------------
# Nonlinearities


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function."""
    out = _stable_sigmoid(x.data)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    """Hyperbolic tangent."""
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(x: Tensor) -> Tensor:
    """`log(1 + exp(x))`, stable for large magnitudes."""
    x_data = x.data
    return _result(
        np.logaddexp(0.0, x_data),
        (x,),
        lambda g: (g * _stable_sigmoid(x_data),),
        "softplus",
    )


def softmax_array(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis of a plain array."""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (each row of a matrix)."""
    out = softmax_array(x.data)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


def cosine_similarity(u: Tensor, v: Tensor, eps: float = COSINE_EPSILON) -> Tensor:
    """Cosine similarity `u·v / (‖u‖‖v‖ + eps)`.

    `v` may be a matrix, in which case the similarity of `u` with every row is
    returned as a vector. Two vectors give a scalar.
    """
    if u.ndim != 1 or v.ndim not in (1, 2) or v.shape[-1] != u.shape[0]:
        raise DimensionError(f"cosine_similarity: shapes {u.shape} and {v.shape} differ")
    u_data = u.data
    v_data = v.data if v.ndim == 2 else v.data.reshape(1, -1)
    u_norm = np.sqrt(np.sum(u_data * u_data))
    v_norm = np.sqrt(np.sum(v_data * v_data, axis=1))
    dots = v_data @ u_data
    denom = u_norm * v_norm + eps
    out = dots / denom

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = g.reshape(-1)
        u_unit = u_data / u_norm if u_norm > 0 else np.zeros_like(u_data)
        safe_v = np.where(v_norm > 0, v_norm, 1.0)
        v_unit = np.where(v_norm[:, None] > 0, v_data / safe_v[:, None], 0.0)
        coeff = g / denom
        correction = g * dots / (denom * denom)
        grad_u = coeff @ v_data - np.sum(correction * v_norm) * u_unit
        grad_v = np.outer(coeff, u_data) - (correction * u_norm)[:, None] * v_unit
        return grad_u, grad_v.reshape(v.shape)

    data = out if v.ndim == 2 else out.reshape(())
    return _result(data, (u, v), backward, "cosine_similarity")


# ---------------------------------------------------------------------------
# Losses


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Negative log-likelihood of `target` under `softmax(logits)`."""
    if logits.ndim != 1:
        raise DimensionError(f"cross_entropy: expected a vector, got {logits.shape}")
    n = logits.shape[0]
    if not 0 <= target < n:
        raise TokenIndexError(f"Target {target} outside {n} classes")
    x = logits.data
    peak = np.max(x)
    log_norm = peak + np.log(np.sum(np.exp(x - peak)))
    loss = (log_norm - x[target]).reshape(())

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(x - log_norm)
        grad[target] -= 1.0
        return (g * grad,)

    return _result(loss, (logits,), backward, "cross_entropy")


def binary_cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Summed Bernoulli negative log-likelihood of `targets` given logits."""
    if logits.shape != targets.shape:
        raise DimensionError(
            f"binary_cross_entropy: shapes {logits.shape} and {targets.shape} differ"
        )
    x = logits.data
    loss = np.sum(np.logaddexp(0.0, x) - targets * x).reshape(())
    return _result(
        loss,
        (logits,),
        lambda g: (g * (_stable_sigmoid(x) - targets),),
        "binary_cross_entropy",
    )


# ---------------------------------------------------------------------------
# Tape and backward pass


@dataclass(frozen=True)
class TapeRecord:
    """One recorded operation, nodes referenced by their tape position."""

    op: str
    inputs: tuple[int, ...]
    output: int


class Tape:
    """Topologically ordered view of the graph that produced a root."""

    def __init__(self, nodes: list[Tensor]) -> None:
        self.nodes = nodes
        self._position = {id(node): i for i, node in enumerate(nodes)}

    @classmethod
    def from_root(cls, root: Tensor) -> Tape:
        """Collect every recorded ancestor of `root`, parents before children."""
        nodes: list[Tensor] = []
        placed: set[int] = set()
        expanded: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, done = stack.pop()
            key = id(node)
            if done:
                if key not in placed:
                    placed.add(key)
                    nodes.append(node)
                continue
            if key in expanded:
                continue
            expanded.add(key)
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in placed:
                    stack.append((parent, False))
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def position(self, node: Tensor) -> int:
        """Return the tape position of `node`."""
        return self._position[id(node)]

    @property
    def records(self) -> list[TapeRecord]:
        """Return the operation records in execution order."""
        return [
            TapeRecord(
                node.op,
                tuple(self._position[id(p)] for p in node._parents if p.requires_grad),
                i,
            )
            for i, node in enumerate(self.nodes)
            if not node.is_leaf
        ]

    @property
    def leaves(self) -> list[Tensor]:
        """Return the trainable leaves reachable from the root."""
        return [node for node in self.nodes if node.is_leaf]


def _accumulate(
    grads: list[Optional[np.ndarray]], slot: int, node: Tensor, value: GradValue
) -> None:
    if value is None:
        return
    if isinstance(value, RowGrad):
        if grads[slot] is None:
            grads[slot] = np.zeros_like(node.data)
        grads[slot][value.index] += value.row  # type: ignore[index]
        return
    if grads[slot] is None:
        grads[slot] = np.array(value, dtype=node.dtype)
    else:
        grads[slot] += value  # type: ignore[operator]


def backward(root: Tensor, leaves: Iterable[Tensor] | None = None) -> Tape:
    """Assign `∂root/∂leaf` to every trainable leaf reachable from `root`.

    Gradients are assigned, never accumulated across passes. Leaves passed in
    `leaves` are reset to zero first, so those the root does not depend on end
    up holding zeros.
    """
    if root.size != 1:
        raise ContractError(f"backward: root must be a scalar, got shape {root.shape}")
    for leaf in leaves or ():
        leaf.zero_grad()
    if not root.requires_grad:
        return Tape([])

    tape = Tape.from_root(root)
    grads: list[Optional[np.ndarray]] = [None] * len(tape)
    grads[-1] = np.ones(root.shape, dtype=root.dtype)
    for slot in range(len(tape) - 1, -1, -1):
        node, g = tape.nodes[slot], grads[slot]
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g
            continue
        assert node._backward is not None
        for parent, value in zip(node._parents, node._backward(g)):
            if parent.requires_grad:
                _accumulate(grads, tape.position(parent), parent, value)
        grads[slot] = None
    _LOGGER.debug("Backward pass over %d tape nodes", len(tape))
    return tape
