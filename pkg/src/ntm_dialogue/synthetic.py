"""Synthetic corpora for checking that the memory actually remembers.

Two generators live here: the classic copy task, where a random bit sequence
must be reproduced after a delimiter, and templated recall dialogues, where a
fact stated in the first turn has to be repeated in the last one.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .autodiff import (
    Tensor,
    add,
    binary_cross_entropy_with_logits,
    concat,
    constant,
    parameter,
)
from .cells import GRUParams, Linear, gru_step
from .config import ModelDims
from .const import COPY_WIDTH
from .corpus import Conversation
from .exceptions import ConfigurationError, ContractError
from .ntm import NTM, NTMState
from .utils import make_rng, uniform_init

_LOGGER = logging.getLogger(__name__)

NAMES = ("alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy")
PROFESSIONS = (
    "doctor",
    "teacher",
    "pilot",
    "farmer",
    "lawyer",
    "chef",
    "nurse",
    "painter",
    "plumber",
    "writer",
)
FILLERS = (
    ("how", "is", "the", "weather", "today", "?"),
    ("it", "is", "sunny", "and", "warm", "."),
    ("did", "you", "sleep", "well", "?"),
    ("yes", ",", "thank", "you", "."),
    ("i", "like", "music", "and", "books", "."),
    ("that", "sounds", "nice", "."),
    ("do", "you", "have", "a", "dog", "?"),
    ("no", ",", "but", "i", "have", "a", "cat", "."),
    ("what", "did", "you", "eat", "?"),
    ("some", "bread", "and", "soup", "."),
)


# ---------------------------------------------------------------------------
# Copy task


@dataclass(frozen=True)
class CopyTask:
    """One copy-task sequence.

    `inputs` is (2L+1)×(B+1): L bit vectors, a delimiter row flagged on the
    extra channel, then L blank rows. `targets` is (2L+1)×B and `mask` marks
    the L rows after the delimiter where the sequence must be reproduced.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> CopyTask:
        """Build the padded input and target streams for a bit sequence."""
        bits = np.asarray(bits, dtype=np.float64)
        if bits.ndim != 2 or not bits.size:
            raise ContractError(f"Copy task bits must be a non-empty matrix, got {bits.shape}")
        length, width = bits.shape
        inputs = np.zeros((2 * length + 1, width + 1))
        inputs[:length, :width] = bits
        inputs[length, width] = 1.0
        targets = np.zeros((2 * length + 1, width))
        targets[length + 1 :] = bits
        mask = np.zeros(2 * length + 1, dtype=np.int64)
        mask[length + 1 :] = 1
        return cls(inputs, targets, mask)

    @property
    def length(self) -> int:
        """Return the number of vectors to copy."""
        return (self.inputs.shape[0] - 1) // 2

    @property
    def width(self) -> int:
        """Return the number of bits per vector."""
        return self.targets.shape[1]

    @property
    def bits(self) -> np.ndarray:
        """Return the sequence to copy."""
        return self.inputs[: self.length, : self.width]

    @property
    def token_count(self) -> int:
        """Return the number of scored bits."""
        return int(self.mask.sum()) * self.width


def _random_bits(rng: np.random.Generator, length: int, width: int) -> np.ndarray:
    return rng.integers(0, 2, size=(length, width)).astype(np.float64)


def gen_copy_task(length: int, width: int = COPY_WIDTH, seed: int = 0) -> CopyTask:
    """Generate one copy task from Bernoulli(0.5) bits."""
    if length < 1 or width < 1:
        raise ConfigurationError("Copy task length and width must be positive")
    return CopyTask.from_bits(_random_bits(make_rng(seed), length, width))


def gen_copy_corpus(
    count: int, max_length: int, width: int = COPY_WIDTH, seed: int = 0
) -> list[CopyTask]:
    """Generate `count` tasks with lengths uniform in 1..max_length."""
    if count < 1 or max_length < 1 or width < 1:
        raise ConfigurationError("Copy corpus count, length and width must be positive")
    rng = make_rng(seed)
    return [
        CopyTask.from_bits(_random_bits(rng, int(rng.integers(1, max_length + 1)), width))
        for _ in range(count)
    ]


def write_copy_corpus(path: Union[str, Path], tasks: Iterable[CopyTask]) -> None:
    """Write one task per line, vectors as 0/1 strings separated by spaces."""
    with open(path, "w", encoding="utf-8") as handle:
        for task in tasks:
            vectors = ("".join(str(int(b)) for b in row) for row in task.bits)
            handle.write(" ".join(vectors) + "\n")


def read_copy_corpus(path: Union[str, Path]) -> list[CopyTask]:
    """Read a file written by `write_copy_corpus`."""
    tasks = []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            vectors = line.split()
            if len({len(v) for v in vectors}) != 1 or set("".join(vectors)) - {"0", "1"}:
                raise ConfigurationError(f"{path}:{number} is not a copy task")
            tasks.append(CopyTask.from_bits(np.array([[int(c) for c in v] for v in vectors])))
    _LOGGER.debug("Read %d copy tasks from %s", len(tasks), path)
    return tasks


class CopyTaskModel:
    """Bit-sequence model: a GRU reading bit vectors, optionally with an NTM.

    The memory is driven the same way as the language model with a segment of
    one: before every input after the first, the previous GRU state runs one NTM
    step whose output conditions the next input and the prediction head.
    """

    def __init__(
        self,
        dims: ModelDims,
        width: int,
        rng: np.random.Generator,
        dtype: Any = np.float32,
        *,
        memory: bool = True,
    ) -> None:
        """Initialize a model with freshly drawn parameters."""
        self.dims = dims
        self.width = width
        self.dtype = np.dtype(dtype)
        d = dims
        read_size = d.ntm_output_size if memory else 0
        self.gru = GRUParams.init(width + 1 + read_size, d.decoder_size, rng, dtype)
        self.ntm: Optional[NTM] = None
        if memory:
            self.ntm = NTM(d.ntm_config(d.decoder_size), rng, dtype)
            self.initial_read = parameter(uniform_init(rng, (read_size,), read_size, dtype))
        self.head = Linear.init(d.decoder_size + read_size, width, rng, dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        """Return every trainable tensor keyed by a stable dotted name."""
        params = self.gru.named_parameters("gru")
        if self.ntm is not None:
            params |= self.ntm.named_parameters("ntm")
            params["ntm.initial_read"] = self.initial_read
        params |= self.head.named_parameters("head")
        return params

    def run(self, task: CopyTask) -> list[Tensor]:
        """Return the bit logits at every input row."""
        if task.width != self.width:
            raise ConfigurationError(f"Copy task width {task.width} != model width {self.width}")
        hidden = self.gru.zero_state()
        read: Optional[Tensor] = None
        state: Optional[NTMState] = None
        if self.ntm is not None:
            read, state = self.initial_read, self.ntm.initial_state()
        logits: list[Tensor] = []
        for position, row in enumerate(task.inputs):
            if self.ntm is not None and position:
                assert state is not None
                read, state = self.ntm.step(hidden, state)
            x = constant(row.astype(self.dtype))
            if read is not None:
                x = concat(x, read)
            hidden = gru_step(x, hidden, self.gru)
            logits.append(self.head(hidden if read is None else concat(hidden, read)))
        return logits

    def forward_loss(self, task: CopyTask, mode: Any = None) -> tuple[Tensor, int]:
        """Summed bit cross-entropy over the rows after the delimiter."""
        loss: Optional[Tensor] = None
        for logits, target, scored in zip(self.run(task), task.targets, task.mask):
            if scored:
                term = binary_cross_entropy_with_logits(logits, target.astype(self.dtype))
                loss = term if loss is None else add(loss, term)
        assert loss is not None
        return loss, task.token_count


# ---------------------------------------------------------------------------
# Recall dialogues


def gen_recall_dialogues(count: int, seed: int = 0) -> list[Conversation]:
    """Generate two-speaker dialogues whose last token repeats an opening fact.

    The first speaker introduces a name and a profession, a few filler
    exchanges follow, the second speaker asks for one of the two facts and the
    first speaker answers with it as the final token.
    """
    if count < 1:
        raise ConfigurationError("Recall dialogue count must be positive")
    rng = make_rng(seed)
    conversations = []
    for _ in range(count):
        name = NAMES[int(rng.integers(len(NAMES)))]
        profession = PROFESSIONS[int(rng.integers(len(PROFESSIONS)))]
        turns: list[tuple[str, ...]] = [
            ("hello", ",", "my", "name", "is", name, "and", "i", "am", "a", profession, ".")
        ]
        for _ in range(int(rng.integers(0, 4))):
            first, second = (int(i) for i in rng.choice(len(FILLERS), size=2, replace=False))
            turns += [FILLERS[first], FILLERS[second]]
        if rng.integers(2):
            turns += [("what", "is", "your", "profession", "?"), ("i", "am", "a", profession)]
        else:
            turns += [("what", "is", "your", "name", "?"), ("my", "name", "is", name)]
        conversations.append(Conversation(tuple(turns)))
    return conversations


def recall_fact(conversation: Conversation) -> str:
    """Return the fact a recall dialogue must reproduce."""
    return conversation.turns[-1][-1]


def recall_vocabulary() -> list[str]:
    """Return every token the recall generator can emit."""
    tokens: dict[str, None] = {}
    for token in (
        "hello , my name is and i am a . what your profession ?".split()
        + list(NAMES)
        + list(PROFESSIONS)
    ):
        tokens[token] = None
    for filler in FILLERS:
        tokens.update(dict.fromkeys(filler))
    return list(tokens)

