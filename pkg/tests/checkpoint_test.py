"""Tests for `ntm_dialogue.checkpoint`."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest
from ntm_dialogue.checkpoint import (
    Checkpoint,
    VocabularyReference,
    dumps_checkpoint,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
)
from ntm_dialogue.const import CHECKPOINT_MAGIC, Architecture
from ntm_dialogue.corpus import Vocabulary
from ntm_dialogue.exceptions import (
    CheckpointError,
    ConfigurationError,
    CorruptCheckpoint,
    UnsupportedCheckpointVersion,
)

from .samples import recall_corpus, tiny_trainer


def _checkpoint() -> Checkpoint:
    conversations, vocab = recall_corpus(4)
    trainer = tiny_trainer(Architecture.NTMLM, vocab, batch_size=2)
    trainer.train_step(trainer.encode_batch(conversations[:2]))
    trainer.step = 1
    return trainer.checkpoint()


def test_checkpoint_restores_everything() -> None:
    """Test that parameters, moments, config and RNG state survive encoding."""
    checkpoint = _checkpoint()
    data = dumps_checkpoint(checkpoint)
    assert data.startswith(CHECKPOINT_MAGIC)
    restored = loads_checkpoint(data, Architecture.NTMLM)
    assert restored.config == checkpoint.config
    assert restored.step == 1
    assert restored.vocab == checkpoint.vocab
    assert restored.rng_state == checkpoint.rng_state
    assert set(restored.parameters) == set(checkpoint.parameters)
    for name, value in checkpoint.parameters.items():
        assert restored.parameters[name].dtype == np.float32
        np.testing.assert_array_equal(restored.parameters[name], value)
    assert restored.adam is not None and checkpoint.adam is not None
    assert restored.adam.step == 1
    for name, moment in checkpoint.adam.second.items():
        np.testing.assert_array_equal(restored.adam.second[name], moment)


def test_encoding_is_deterministic() -> None:
    """Test that the same checkpoint always encodes to the same bytes."""
    checkpoint = _checkpoint()
    assert dumps_checkpoint(checkpoint) == dumps_checkpoint(checkpoint)


def test_bad_magic() -> None:
    """Test that other files are rejected."""
    with pytest.raises(CorruptCheckpoint):
        loads_checkpoint(b"PK\x03\x04" + bytes(64))


def test_unsupported_version() -> None:
    """Test that a newer format version is refused."""
    data = bytearray(dumps_checkpoint(_checkpoint()))
    data[4:8] = struct.pack("<I", 99)
    with pytest.raises(UnsupportedCheckpointVersion):
        loads_checkpoint(bytes(data))


def test_flipped_byte_fails_the_digest() -> None:
    """Test that any changed payload byte is detected."""
    data = bytearray(dumps_checkpoint(_checkpoint()))
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(CorruptCheckpoint):
        loads_checkpoint(bytes(data))


def test_truncated_checkpoint() -> None:
    """Test that a short file is reported as corrupt."""
    data = dumps_checkpoint(_checkpoint())
    for size in (len(data) - 1, len(data) // 2, 6):
        with pytest.raises(CheckpointError):
            loads_checkpoint(data[:size])


def test_architecture_mismatch() -> None:
    """Test that loading as another architecture is refused."""
    data = dumps_checkpoint(_checkpoint())
    with pytest.raises(ConfigurationError):
        loads_checkpoint(data, Architecture.DNTMS)


def test_unsupported_dtype() -> None:
    """Test that only single and double precision arrays are stored."""
    checkpoint = _checkpoint()
    checkpoint.parameters["head.bias"] = checkpoint.parameters["head.bias"].astype(np.float16)
    with pytest.raises(ConfigurationError):
        dumps_checkpoint(checkpoint)


def test_checkpoint_file(tmp_path: Path) -> None:
    """Test writing and reading a checkpoint file."""
    path = tmp_path / "model.ckpt"
    checkpoint = _checkpoint()
    save_checkpoint(path, checkpoint)
    assert load_checkpoint(path).parameters.keys() == checkpoint.parameters.keys()


def test_vocabulary_reference() -> None:
    """Test that a reference accepts its vocabulary and rejects others."""
    vocab = Vocabulary(["x", "y"])
    reference = VocabularyReference.of(vocab, "vocab.txt")
    assert reference.size == 6
    assert reference.path == "vocab.txt"
    reference.check(Vocabulary(["x", "y"]))
    with pytest.raises(ConfigurationError):
        reference.check(Vocabulary(["y", "x"]))
