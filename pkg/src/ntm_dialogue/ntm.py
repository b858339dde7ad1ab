"""Neural Turing Machine: addressable memory driven by an LSTM controller."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, NamedTuple, Optional

import numpy as np

from .autodiff import (
    Tensor,
    add,
    broadcast_rows,
    concat,
    constant,
    cosine_similarity,
    matmul,
    mul,
    one_minus,
    outer,
    parameter,
    power,
    reciprocal,
    reshape,
    roll,
    scale,
    sigmoid,
    slice_last,
    softmax,
    softplus,
    total,
)
from .cells import Linear, LSTMParams, LSTMState, lstm_step
from .exceptions import ConfigurationError, DimensionError
from .utils import uniform_init

_LOGGER = logging.getLogger(__name__)

SHIFT_OFFSETS = (-1, 0, 1)
# key width + strength, gate, three shift logits, sharpening
_ADDRESSING_EXTRA = 6


@dataclass(frozen=True)
class NTMConfig:
    """Shape of one NTM."""

    input_size: int
    slots: int = 20
    width: int = 512
    read_heads: int = 1
    write_heads: int = 1
    controller_size: int = 512
    output_size: int = 400

    def __post_init__(self) -> None:
        for name in ("input_size", "slots", "width", "read_heads", "controller_size", "output_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"NTM {name} must be positive")
        if self.write_heads < 0:
            raise ConfigurationError("NTM write_heads must not be negative")

    @property
    def read_emission_size(self) -> int:
        """Return the width of one read head's raw emission."""
        return self.width + _ADDRESSING_EXTRA

    @property
    def write_emission_size(self) -> int:
        """Return the width of one write head's raw emission (adds erase and add)."""
        return 3 * self.width + _ADDRESSING_EXTRA


class HeadEmission(NamedTuple):
    """Constrained addressing parameters emitted by one head."""

    key: Tensor
    strength: Tensor
    gate: Tensor
    shift: Tensor
    sharpening: Tensor
    erase: Optional[Tensor] = None
    add: Optional[Tensor] = None


class AddressingTrace(NamedTuple):
    """Weighting after each addressing stage."""

    content: Tensor
    gated: Tensor
    shifted: Tensor
    sharpened: Tensor


class NTMState(NamedTuple):
    """Everything one NTM carries from step to step."""

    memory: Tensor
    read_weights: tuple[Tensor, ...]
    write_weights: tuple[Tensor, ...]
    prev_reads: tuple[Tensor, ...]
    controller: LSTMState


def content_address(key: Tensor, strength: Tensor, memory: Tensor) -> Tensor:
    """Softmax over slots of `strength · cos(key, memory[i])`."""
    if key.shape != memory.shape[1:]:
        raise DimensionError(f"content_address: key {key.shape} vs memory {memory.shape}")
    return softmax(scale(cosine_similarity(key, memory), strength))


def interpolate(w_content: Tensor, w_prev: Tensor, gate: Tensor) -> Tensor:
    """Blend `g·w_content + (1 − g)·w_prev`."""
    return add(scale(w_content, gate), scale(w_prev, one_minus(gate)))


def shift_weighting(w: Tensor, shift: Tensor) -> Tensor:
    """Circular convolution of `w` with a distribution over offsets −1, 0, +1."""
    if shift.shape != (len(SHIFT_OFFSETS),):
        raise DimensionError(f"shift_weighting: shift must be (3,), got {shift.shape}")
    out: Tensor | None = None
    for j, offset in enumerate(SHIFT_OFFSETS):
        term = scale(roll(w, offset), slice_last(shift, j, j + 1))
        out = term if out is None else add(out, term)
    assert out is not None
    return out


def sharpen(w: Tensor, gamma: Tensor) -> Tensor:
    """Raise to `gamma` and renormalize."""
    raised = power(w, gamma)
    return scale(raised, reciprocal(total(raised)))


def address(emission: HeadEmission, w_prev: Tensor, memory: Tensor) -> AddressingTrace:
    """Run content addressing followed by the three location stages."""
    content = content_address(emission.key, emission.strength, memory)
    gated = interpolate(content, w_prev, emission.gate)
    shifted = shift_weighting(gated, emission.shift)
    return AddressingTrace(content, gated, shifted, sharpen(shifted, emission.sharpening))


def read_memory(memory: Tensor, w: Tensor) -> Tensor:
    """Weighted sum of memory rows."""
    slots, width = memory.shape
    if w.shape != (slots,):
        raise DimensionError(f"read_memory: weighting {w.shape} vs memory {memory.shape}")
    return reshape(matmul(reshape(w, (1, slots)), memory), (width,))


def write_memory(memory: Tensor, w: Tensor, erase: Tensor, add_vector: Tensor) -> Tensor:
    """Erase then add: `M[i] ∘ (1 − w[i]·e) + w[i]·a`."""
    if w.shape != memory.shape[:1] or erase.shape != memory.shape[1:]:
        raise DimensionError(
            f"write_memory: weighting {w.shape}, erase {erase.shape} vs memory {memory.shape}"
        )
    kept = mul(memory, one_minus(outer(w, erase)))
    return add(kept, outer(w, add_vector))


def _one_hot(size: int, index: int, dtype: Any) -> Tensor:
    values = np.zeros(size, dtype=dtype)
    values[index] = 1.0
    return constant(values)


class NTM:
    """Parameters of one NTM and its single-step interface."""

    def __init__(
        self, config: NTMConfig, rng: np.random.Generator, dtype: Any = np.float32
    ) -> None:
        """Initialize an NTM with freshly drawn parameters."""
        self.config = config
        self.dtype = np.dtype(dtype)
        c = config
        self.controller = LSTMParams.init(
            c.input_size + c.read_heads * c.width, c.controller_size, rng, dtype
        )
        self.read_heads = [
            Linear.init(c.controller_size, c.read_emission_size, rng, dtype)
            for _ in range(c.read_heads)
        ]
        self.write_heads = [
            Linear.init(c.controller_size, c.write_emission_size, rng, dtype)
            for _ in range(c.write_heads)
        ]
        self.output = Linear.init(
            c.controller_size + c.read_heads * c.width, c.output_size, rng, dtype
        )
        self.memory_bias = parameter(uniform_init(rng, (c.width,), c.width, dtype))
        self.read_bias = [
            parameter(uniform_init(rng, (c.width,), c.width, dtype))
            for _ in range(c.read_heads)
        ]

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        """Return parameters keyed by dotted name."""
        params = self.controller.named_parameters(f"{prefix}.controller")
        for i, head in enumerate(self.read_heads):
            params |= head.named_parameters(f"{prefix}.read{i}")
        for i, head in enumerate(self.write_heads):
            params |= head.named_parameters(f"{prefix}.write{i}")
        params |= self.output.named_parameters(f"{prefix}.output")
        params[f"{prefix}.memory_bias"] = self.memory_bias
        for i, bias in enumerate(self.read_bias):
            params[f"{prefix}.read_bias{i}"] = bias
        return params

    def initial_state(self) -> NTMState:
        """Memory rows from the learned bias, weightings on slot 0."""
        c = self.config
        return NTMState(
            memory=broadcast_rows(self.memory_bias, c.slots),
            read_weights=tuple(
                _one_hot(c.slots, 0, self.dtype) for _ in range(c.read_heads)
            ),
            write_weights=tuple(
                _one_hot(c.slots, 0, self.dtype) for _ in range(c.write_heads)
            ),
            prev_reads=tuple(self.read_bias),
            controller=self.controller.zero_state(),
        )

    def emit(self, head: Linear, h: Tensor, *, writes: bool) -> HeadEmission:
        """Map controller output to constrained head parameters."""
        width = self.config.width
        raw = head(h)
        one = constant(np.ones(1, dtype=self.dtype))
        emission = HeadEmission(
            key=slice_last(raw, 0, width),
            strength=softplus(slice_last(raw, width, width + 1)),
            gate=sigmoid(slice_last(raw, width + 1, width + 2)),
            shift=softmax(slice_last(raw, width + 2, width + 5)),
            sharpening=add(one, softplus(slice_last(raw, width + 5, width + 6))),
        )
        if writes:
            offset = width + _ADDRESSING_EXTRA
            emission = emission._replace(
                erase=sigmoid(slice_last(raw, offset, offset + width)),
                add=slice_last(raw, offset + width, offset + 2 * width),
            )
        return emission

    def step(
        self, x: Tensor, state: NTMState, *, write: bool = True
    ) -> tuple[Tensor, NTMState]:
        """Consume one input and return `(output, next_state)`.

        Reads see the memory as it stood on entry; writes are then applied in
        head order. With `write=False` addressing and reads still run but the
        memory and write weightings are carried over unchanged.
        """
        c = self.config
        if x.shape != (c.input_size,):
            raise DimensionError(f"ntm_step: expected input ({c.input_size},), got {x.shape}")

        h, controller = lstm_step(concat(x, *state.prev_reads), state.controller, self.controller)

        read_weights = tuple(
            address(self.emit(head, h, writes=False), w_prev, state.memory).sharpened
            for head, w_prev in zip(self.read_heads, state.read_weights)
        )
        reads = tuple(read_memory(state.memory, w) for w in read_weights)

        memory, write_weights = state.memory, state.write_weights
        if write:
            new_weights = []
            for head, w_prev in zip(self.write_heads, state.write_weights):
                emission = self.emit(head, h, writes=True)
                w = address(emission, w_prev, state.memory).sharpened
                assert emission.erase is not None and emission.add is not None
                memory = write_memory(memory, w, emission.erase, emission.add)
                new_weights.append(w)
            write_weights = tuple(new_weights)

        output = self.output(concat(h, *reads))
        return output, NTMState(memory, read_weights, write_weights, reads, controller)
