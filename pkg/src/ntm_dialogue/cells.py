"""Recurrent cells: the GRU used by every architecture and the LSTM NTM controller."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    constant,
    matmul,
    mul,
    one_minus,
    parameter,
    sigmoid,
    tanh,
)
from .const import FORGET_BIAS
from .exceptions import ContractError, DimensionError
from .utils import uniform_init

GRUState = Tensor


def _check_vector(name: str, t: Tensor, size: int) -> None:
    if t.shape != (size,):
        raise DimensionError(f"{name}: expected shape ({size},), got {t.shape}")


@dataclass
class Linear:
    """Affine map `weight · x + bias`."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(
        cls,
        in_size: int,
        out_size: int,
        rng: np.random.Generator,
        dtype: Any = np.float32,
    ) -> Linear:
        """Create a layer with uniform weights and zero bias."""
        return cls(
            parameter(uniform_init(rng, (out_size, in_size), in_size, dtype)),
            parameter(np.zeros(out_size, dtype=dtype)),
        )

    @property
    def in_size(self) -> int:
        """Return the input width."""
        return self.weight.shape[1]

    @property
    def out_size(self) -> int:
        """Return the output width."""
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(self.weight, x), self.bias)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        """Return parameters keyed by dotted name."""
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class GRUParams:
    """Weights of a GRU cell; every matrix is hidden×(hidden+input)."""

    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor
    strict: bool = False

    def __post_init__(self) -> None:
        if not self.w_z.shape == self.w_r.shape == self.w_h.shape:
            raise DimensionError(
                f"GRU weights differ: {self.w_z.shape}, {self.w_r.shape}, {self.w_h.shape}"
            )

    @classmethod
    def init(
        cls,
        input_size: int,
        hidden_size: int,
        rng: np.random.Generator,
        dtype: Any = np.float32,
        *,
        strict: bool = False,
    ) -> GRUParams:
        """Create a cell with uniform weights.

        With `strict` the biases stay frozen at zero and are not trained.
        """
        fan_in = hidden_size + input_size
        shape = (hidden_size, fan_in)
        weights = [parameter(uniform_init(rng, shape, fan_in, dtype)) for _ in range(3)]
        make_bias = constant if strict else parameter
        biases = [make_bias(np.zeros(hidden_size, dtype=dtype)) for _ in range(3)]
        return cls(*weights, *biases, strict=strict)

    @property
    def hidden_size(self) -> int:
        """Return the hidden width."""
        return self.w_z.shape[0]

    @property
    def input_size(self) -> int:
        """Return the input width."""
        return self.w_z.shape[1] - self.w_z.shape[0]

    def zero_state(self) -> GRUState:
        """Return an all-zero hidden state."""
        return constant(np.zeros(self.hidden_size, dtype=self.w_z.dtype))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        """Return parameters keyed by dotted name."""
        params = {
            f"{prefix}.w_z": self.w_z,
            f"{prefix}.w_r": self.w_r,
            f"{prefix}.w_h": self.w_h,
        }
        if not self.strict:
            params |= {
                f"{prefix}.b_z": self.b_z,
                f"{prefix}.b_r": self.b_r,
                f"{prefix}.b_h": self.b_h,
            }
        return params


def gru_step(x: Tensor, h_prev: GRUState, p: GRUParams) -> GRUState:
    """Advance a GRU by one input.

    z = σ(W_z·[h, x]), r = σ(W_r·[h, x]), h̃ = tanh(W·[r∗h, x]),
    h' = (1 − z)∗h + z∗h̃. The reset gate scales the state before it is
    concatenated with the input; the state always comes first.
    """
    _check_vector("gru_step input", x, p.input_size)
    _check_vector("gru_step state", h_prev, p.hidden_size)
    hx = concat(h_prev, x)
    z = sigmoid(add(matmul(p.w_z, hx), p.b_z))
    r = sigmoid(add(matmul(p.w_r, hx), p.b_r))
    candidate = tanh(add(matmul(p.w_h, concat(mul(r, h_prev), x)), p.b_h))
    return add(mul(one_minus(z), h_prev), mul(z, candidate))


def gru_sequence(xs: Sequence[Tensor], h0: GRUState, p: GRUParams) -> list[GRUState]:
    """Fold `gru_step` over `xs`, returning every intermediate state."""
    if not xs:
        raise ContractError("gru_sequence: input sequence is empty")
    states: list[GRUState] = []
    h = h0
    for x in xs:
        h = gru_step(x, h, p)
        states.append(h)
    return states


class LSTMState(NamedTuple):
    """Hidden output and cell memory of an LSTM."""

    h: Tensor
    c: Tensor


@dataclass
class LSTMParams:
    """Gate weights of an LSTM; matrices are hidden×(hidden+input)."""

    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    w_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    @classmethod
    def init(
        cls,
        input_size: int,
        hidden_size: int,
        rng: np.random.Generator,
        dtype: Any = np.float32,
        *,
        forget_bias: float = FORGET_BIAS,
    ) -> LSTMParams:
        """Create a cell with uniform weights and the forget bias set open."""
        fan_in = hidden_size + input_size
        shape = (hidden_size, fan_in)
        weights = [parameter(uniform_init(rng, shape, fan_in, dtype)) for _ in range(4)]
        zeros = np.zeros(hidden_size, dtype=dtype)
        return cls(
            *weights,
            b_i=parameter(zeros),
            b_f=parameter(np.full(hidden_size, forget_bias, dtype=dtype)),
            b_o=parameter(zeros),
            b_c=parameter(zeros),
        )

    @property
    def hidden_size(self) -> int:
        """Return the hidden width."""
        return self.w_i.shape[0]

    @property
    def input_size(self) -> int:
        """Return the input width."""
        return self.w_i.shape[1] - self.w_i.shape[0]

    def zero_state(self) -> LSTMState:
        """Return zero hidden output and cell."""
        zeros = np.zeros(self.hidden_size, dtype=self.w_i.dtype)
        return LSTMState(constant(zeros), constant(zeros))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        """Return parameters keyed by dotted name."""
        return {
            f"{prefix}.{name}": getattr(self, name)
            for name in ("w_i", "w_f", "w_o", "w_c", "b_i", "b_f", "b_o", "b_c")
        }


def lstm_step(x: Tensor, state: LSTMState, p: LSTMParams) -> tuple[Tensor, LSTMState]:
    """Advance an LSTM by one input and return `(h, new_state)`."""
    _check_vector("lstm_step input", x, p.input_size)
    _check_vector("lstm_step hidden", state.h, p.hidden_size)
    _check_vector("lstm_step cell", state.c, p.hidden_size)
    hx = concat(state.h, x)
    i = sigmoid(add(matmul(p.w_i, hx), p.b_i))
    f = sigmoid(add(matmul(p.w_f, hx), p.b_f))
    o = sigmoid(add(matmul(p.w_o, hx), p.b_o))
    g = tanh(add(matmul(p.w_c, hx), p.b_c))
    c = add(mul(f, state.c), mul(i, g))
    h = mul(o, tanh(c))
    return h, LSTMState(h, c)
