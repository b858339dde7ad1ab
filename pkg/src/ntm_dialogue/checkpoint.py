"""Binary checkpoint codec.

Layout, all integers little-endian:

    b"NTMD" | version u32 | header length u32 | header (UTF-8 JSON)
    | record count u32 | records | SHA-256 of everything before it

Each record is `name length u16 | name | dtype code u8 | ndim u8 | dims u32…
| raw scalars`. The header holds the training config, the vocabulary
reference, the RNG state and the Adam step; parameters and Adam moments are
records (moments are prefixed `adam.m.` / `adam.v.`).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .config import TrainConfig
from .const import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, Architecture
from .corpus import Vocabulary
from .exceptions import (
    ConfigurationError,
    CorruptCheckpoint,
    UnsupportedCheckpointVersion,
)
from .optim import AdamState
from .utils import sha256_digest

_LOGGER = logging.getLogger(__name__)

_DIGEST_SIZE = 32
_FIRST_MOMENT = "adam.m."
_SECOND_MOMENT = "adam.v."
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class VocabularyReference:
    """Identifies the vocabulary a model was trained with."""

    size: int
    digest: str
    path: Optional[str] = None

    @classmethod
    def of(cls, vocab: Vocabulary, path: Union[str, Path, None] = None) -> VocabularyReference:
        """Reference `vocab`, optionally remembering where it is stored."""
        digest = sha256_digest("\n".join(vocab.tokens).encode("utf-8")).hex()
        return cls(len(vocab), digest, None if path is None else str(path))

    def check(self, vocab: Vocabulary) -> None:
        """Raise `ConfigurationError` unless `vocab` is the referenced one."""
        if VocabularyReference.of(vocab).digest != self.digest:
            raise ConfigurationError(
                f"Vocabulary ({len(vocab)} tokens) does not match the checkpoint's ({self.size})"
            )


@dataclass
class Checkpoint:
    """Everything needed to resume training or to evaluate a model."""

    config: TrainConfig
    parameters: dict[str, np.ndarray]
    rng_state: dict[str, Any]
    step: int = 0
    vocab: Optional[VocabularyReference] = None
    adam: Optional[AdamState] = None
    extra: dict[str, Any] = field(default_factory=dict)


def _header(checkpoint: Checkpoint) -> bytes:
    adam = checkpoint.adam
    header = {
        "config": checkpoint.config.to_dict(),
        "vocab": None if checkpoint.vocab is None else vars(checkpoint.vocab),
        "rng": checkpoint.rng_state,
        "step": checkpoint.step,
        "adam": None
        if adam is None
        else {
            "step": adam.step,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
        },
        "extra": checkpoint.extra,
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _record(name: str, array: np.ndarray) -> bytes:
    dtype = array.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise ConfigurationError(f"Cannot store {name} with dtype {array.dtype}")
    encoded = name.encode("utf-8")
    return b"".join(
        (
            struct.pack("<H", len(encoded)),
            encoded,
            struct.pack("<BB", _DTYPE_CODES[dtype], array.ndim),
            struct.pack(f"<{array.ndim}I", *array.shape),
            np.ascontiguousarray(array, dtype=dtype).tobytes(),
        )
    )


def dumps_checkpoint(checkpoint: Checkpoint) -> bytes:
    """Serialize a checkpoint."""
    records = dict(checkpoint.parameters)
    if checkpoint.adam is not None:
        for name, moment in checkpoint.adam.first.items():
            records[_FIRST_MOMENT + name] = moment
        for name, moment in checkpoint.adam.second.items():
            records[_SECOND_MOMENT + name] = moment
    header = _header(checkpoint)
    body = b"".join(
        (
            CHECKPOINT_MAGIC,
            struct.pack("<II", CHECKPOINT_VERSION, len(header)),
            header,
            struct.pack("<I", len(records)),
            *(_record(name, array) for name, array in records.items()),
        )
    )
    return body + sha256_digest(body)


class _Reader:
    """Cursor over checkpoint bytes that reports short reads as corruption."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._offset = 0

    def take(self, size: int) -> bytes:
        if self._offset + size > len(self._data):
            raise CorruptCheckpoint("Checkpoint is truncated")
        chunk = self._data[self._offset : self._offset + size]
        self._offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self._offset == len(self._data)


def loads_checkpoint(
    data: bytes, expected_architecture: Optional[Architecture] = None
) -> Checkpoint:
    """Parse checkpoint bytes, verifying magic, version and digest."""
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("Not a checkpoint file")
    reader = _Reader(data[: -_DIGEST_SIZE] if len(data) > _DIGEST_SIZE else b"")
    reader.take(len(CHECKPOINT_MAGIC))
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedCheckpointVersion(
            f"Checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )
    if sha256_digest(data[: -_DIGEST_SIZE]) != data[-_DIGEST_SIZE:]:
        raise CorruptCheckpoint("Checkpoint digest does not match its contents")

    (header_size,) = reader.unpack("<I")
    try:
        header = json.loads(reader.take(header_size).decode("utf-8"))
        config = TrainConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as ex:
        raise CorruptCheckpoint(f"Checkpoint header is unreadable: {ex}") from ex
    if expected_architecture is not None and config.architecture != expected_architecture:
        raise ConfigurationError(
            f"Checkpoint holds a {config.architecture} model, not {expected_architecture}"
        )

    parameters: dict[str, np.ndarray] = {}
    first: dict[str, np.ndarray] = {}
    second: dict[str, np.ndarray] = {}
    (count,) = reader.unpack("<I")
    for _ in range(count):
        (name_size,) = reader.unpack("<H")
        name = reader.take(name_size).decode("utf-8")
        code, ndim = reader.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise CorruptCheckpoint(f"Unknown dtype code {code} for {name}")
        dtype = _CODE_DTYPES[code]
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        array = np.frombuffer(reader.take(size), dtype=dtype).reshape(shape).copy()
        if name.startswith(_FIRST_MOMENT):
            first[name[len(_FIRST_MOMENT) :]] = array
        elif name.startswith(_SECOND_MOMENT):
            second[name[len(_SECOND_MOMENT) :]] = array
        else:
            parameters[name] = array
    if not reader.exhausted:
        raise CorruptCheckpoint("Trailing bytes after the last record")

    adam = None
    if (adam_header := header.get("adam")) is not None:
        adam = AdamState(first, second, **adam_header)
    vocab = header.get("vocab")
    return Checkpoint(
        config=config,
        parameters=parameters,
        rng_state=header["rng"],
        step=header["step"],
        vocab=None if vocab is None else VocabularyReference(**vocab),
        adam=adam,
        extra=header.get("extra", {}),
    )


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> None:
    """Write a checkpoint file."""
    Path(path).write_bytes(dumps_checkpoint(checkpoint))
    _LOGGER.info("Checkpoint written to %s (step %d)", path, checkpoint.step)


def load_checkpoint(
    path: Union[str, Path], expected_architecture: Optional[Architecture] = None
) -> Checkpoint:
    """Read a checkpoint file."""
    return loads_checkpoint(Path(path).read_bytes(), expected_architecture)
