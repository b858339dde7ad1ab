"""NTM dialogue constants."""

from __future__ import annotations

import sys
from typing import Final

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:
    from backports.strenum import StrEnum


class Architecture(StrEnum):
    """Supported model architectures."""

    SEQ2SEQ = "seq2seq"
    DNTMS = "d-ntms"
    LM = "lm"
    NTMLM = "ntm-lm"

    @property
    def uses_memory(self) -> bool:
        """Return `True` if the architecture carries NTM memory."""
        return self in (Architecture.DNTMS, Architecture.NTMLM)

    @property
    def is_language_model(self) -> bool:
        """Return `True` for the language-model family."""
        return self in (Architecture.LM, Architecture.NTMLM)


class SegmentPolicy(StrEnum):
    """How D-NTMS splits a turn into write segments."""

    QUARTERS = "quarters"
    FIXED = "fixed"


class Split(StrEnum):
    """Loss log splits."""

    TRAIN = "train"
    VALID = "valid"


class Precision(StrEnum):
    """Scalar precision."""

    SINGLE = "32"
    DOUBLE = "64"


class Task(StrEnum):
    """Training tasks."""

    DIALOGUE = "dialogue"
    COPY = "copy"


# Reserved vocabulary entries, ids 0..3
PAD: Final = "<pad>"
UNK: Final = "<unk>"
SEP: Final = "</s>"
EOS: Final = "<eos>"
RESERVED_TOKENS: Final[tuple[str, ...]] = (PAD, UNK, SEP, EOS)
PAD_ID: Final = 0
UNK_ID: Final = 1
SEP_ID: Final = 2
EOS_ID: Final = 3

# Preprocessing
VOCAB_SIZE: Final = 50_000
HISTORY_CAP: Final = 170
RESPONSE_CAP: Final = 30
CONVERSATION_CAP: Final = 200
VALID_FRACTION_PERCENT: Final = 5

# Layer dimensions
EMBEDDING_SIZE: Final = 200
ENCODER_SIZE: Final = 200
DECODER_SIZE: Final = 400
SEGMENTS_PER_TURN: Final = 4
DNTMS_FIXED_SEGMENT: Final = 5
LM_SEGMENT_SIZE: Final = 20
COPY_WIDTH: Final = 6

# Training
LEARNING_RATE: Final = 1e-4
BATCH_SIZE: Final = 32
EPOCHS: Final = 1
ADAM_BETA1: Final = 0.9
ADAM_BETA2: Final = 0.999
ADAM_EPSILON: Final = 1e-8

# Numerics
COSINE_EPSILON: Final = 1e-8
FORGET_BIAS: Final = 1.0
GRADCHECK_STEP: Final = 1e-5
GRADCHECK_TOLERANCE: Final = 1e-4
GRADCHECK_FLOOR: Final = 1e-4

# Checkpoint format
CHECKPOINT_MAGIC: Final = b"NTMD"
CHECKPOINT_VERSION: Final = 1
