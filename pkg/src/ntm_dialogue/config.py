"""Model and training configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .const import (
    BATCH_SIZE,
    COPY_WIDTH,
    DECODER_SIZE,
    DNTMS_FIXED_SEGMENT,
    EMBEDDING_SIZE,
    ENCODER_SIZE,
    EPOCHS,
    LEARNING_RATE,
    LM_SEGMENT_SIZE,
    Architecture,
    Precision,
    SegmentPolicy,
    Task,
)
from .exceptions import ConfigurationError
from .ntm import NTMConfig


@dataclass(frozen=True)
class ModelDims:
    """Layer sizes, NTM shape and architecture switches."""

    vocab_size: int
    embedding_size: int = EMBEDDING_SIZE
    encoder_size: int = ENCODER_SIZE
    decoder_size: int = DECODER_SIZE
    slots: int = 20
    width: int = 512
    read_heads: int = 1
    write_heads: int = 1
    controller_size: int = 512
    ntm_output_size: int = DECODER_SIZE
    segment_size: int = LM_SEGMENT_SIZE
    segment_policy: SegmentPolicy = SegmentPolicy.QUARTERS
    read_only_decode: bool = False
    head_uses_read: bool = True
    strict_gru: bool = False
    head_init_scale: float = 0.1

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                if value <= 0:
                    raise ConfigurationError(f"{f.name} must be positive, got {value}")

    @classmethod
    def for_architecture(
        cls, architecture: Architecture, vocab_size: int, **overrides: Any
    ) -> ModelDims:
        """Defaults for an architecture, with overrides applied."""
        if architecture.is_language_model:
            defaults: dict[str, Any] = {
                "slots": 32,
                "width": 64,
                "read_heads": 4,
                "write_heads": 4,
                "ntm_output_size": 64,
                "segment_size": LM_SEGMENT_SIZE,
            }
        else:
            defaults = {"segment_size": DNTMS_FIXED_SEGMENT}
        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return cls(vocab_size=vocab_size, **defaults)

    @classmethod
    def tiny(cls, architecture: Architecture, vocab_size: int = 11) -> ModelDims:
        """Gradient-check sized dimensions."""
        return cls.for_architecture(
            architecture,
            vocab_size,
            embedding_size=4,
            encoder_size=6,
            decoder_size=6,
            slots=4,
            width=5,
            read_heads=1,
            write_heads=1,
            controller_size=6,
            ntm_output_size=5,
            segment_size=3,
            head_init_scale=1.0,
        )

    def ntm_config(self, input_size: int) -> NTMConfig:
        """Return the shape of an NTM fed vectors of `input_size`."""
        return NTMConfig(
            input_size=input_size,
            slots=self.slots,
            width=self.width,
            read_heads=self.read_heads,
            write_heads=self.write_heads,
            controller_size=self.controller_size,
            output_size=self.ntm_output_size,
        )

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-friendly mapping."""
        return {f.name: _plain(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelDims:
        """Inverse of `to_dict`."""
        values = dict(data)
        values["segment_policy"] = SegmentPolicy(values["segment_policy"])
        return cls(**values)


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run."""

    architecture: Architecture
    dims: ModelDims
    task: Task = Task.DIALOGUE
    learning_rate: float = LEARNING_RATE
    batch_size: int = BATCH_SIZE
    epochs: int = EPOCHS
    seed: int = 0
    precision: Precision = Precision.SINGLE
    max_steps: Optional[int] = None
    clip_norm: Optional[float] = None
    eval_every: int = 0
    shuffle: bool = False
    response_only: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigurationError("Learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("Batch size and epochs must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be positive")
        if self.eval_every < 0:
            raise ConfigurationError("eval_every must not be negative")
        if self.seed < 0:
            raise ConfigurationError("seed must not be negative")

    @property
    def copy_width(self) -> int:
        """Return the bit width of copy-task vectors."""
        return int(self.extra.get("copy_width", COPY_WIDTH))

    @property
    def dtype(self) -> np.dtype:
        """Return the numpy scalar type for the configured precision."""
        return np.dtype(np.float64 if self.precision == Precision.DOUBLE else np.float32)

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-friendly mapping."""
        data = {
            f.name: _plain(getattr(self, f.name))
            for f in dataclasses.fields(self)
            if f.name != "dims"
        }
        data["dims"] = self.dims.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        """Inverse of `to_dict`."""
        values = dict(data)
        values["architecture"] = Architecture(values["architecture"])
        values["task"] = Task(values["task"])
        values["precision"] = Precision(values["precision"])
        values["dims"] = ModelDims.from_dict(values["dims"])
        return cls(**values)


def _plain(value: Any) -> Any:
    """Unwrap enums for JSON."""
    return str(value) if isinstance(value, str) else value
