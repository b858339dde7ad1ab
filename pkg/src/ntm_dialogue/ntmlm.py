"""Single-NTM language model (NTM-LM) and its plain GRU language-model baseline."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any, NamedTuple, Optional

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    constant,
    cross_entropy,
    embedding,
    no_grad,
    parameter,
    softmax_array,
)
from .cells import GRUParams, Linear, gru_step
from .config import ModelDims
from .const import CONVERSATION_CAP, EOS_ID, PAD_ID, SEP_ID, Architecture
from .corpus import Conversation, StreamExample, Vocabulary, encode_lm
from .exceptions import ConfigurationError, ContractError
from .ntm import NTM, NTMState
from .utils import sample_index, uniform_init

_LOGGER = logging.getLogger(__name__)


class LMCursor(NamedTuple):
    """Position of a running language model within a stream."""

    hidden: Tensor
    read: Optional[Tensor]
    memory: Optional[NTMState]
    position: int = 0
    ntm_steps: int = 0


class LMOutput(NamedTuple):
    """Result of running the language model over a stream."""

    logits: list[Tensor]
    nll: Tensor
    count: int
    ntm_steps: int
    reads: list[Optional[Tensor]]

    @property
    def distributions(self) -> list[np.ndarray]:
        """Return the next-token distribution at every position."""
        return [softmax_array(row.data) for row in self.logits]


class NTMLMModel:
    """GRU language model over whole conversations with NTM calls between segments.

    At every segment boundary the GRU state drives one NTM step whose output is
    the read vector conditioning each token of the following segment and the
    prediction head. The step runs when the first token of the next segment
    arrives, so no step follows the final segment.
    """

    def __init__(
        self,
        dims: ModelDims,
        rng: np.random.Generator,
        dtype: Any = np.float32,
        *,
        architecture: Architecture = Architecture.NTMLM,
    ) -> None:
        """Initialize a model with freshly drawn parameters."""
        if not architecture.is_language_model:
            raise ConfigurationError(f"{architecture} is not a language-model architecture")
        self.architecture = architecture
        self.dims = dims
        self.dtype = np.dtype(dtype)
        d = dims
        read_size = d.ntm_output_size if architecture.uses_memory else 0
        self.read_size = read_size
        self.embedding = parameter(
            uniform_init(rng, (d.vocab_size, d.embedding_size), d.embedding_size, dtype)
        )
        self.gru = GRUParams.init(
            d.embedding_size + read_size, d.decoder_size, rng, dtype, strict=d.strict_gru
        )
        self.ntm: Optional[NTM] = None
        if architecture.uses_memory:
            self.ntm = NTM(d.ntm_config(d.decoder_size), rng, dtype)
            self.initial_read = parameter(uniform_init(rng, (read_size,), read_size, dtype))
        head_in = d.decoder_size + (read_size if d.head_uses_read else 0)
        self.head = Linear.init(head_in, d.vocab_size, rng, dtype)
        self.head.weight.data *= d.head_init_scale

    @property
    def segment_size(self) -> int:
        """Return the number of tokens between NTM steps."""
        return self.dims.segment_size

    def named_parameters(self) -> dict[str, Tensor]:
        """Return every trainable tensor keyed by a stable dotted name."""
        params = {"embedding": self.embedding}
        params |= self.gru.named_parameters("gru")
        if self.ntm is not None:
            params |= self.ntm.named_parameters("ntm")
            params["ntm.initial_read"] = self.initial_read
        params |= self.head.named_parameters("head")
        return params

    def encode(
        self, conversation: Conversation, vocab: Vocabulary, *, response_only: bool = False
    ) -> StreamExample:
        """Encode a conversation for this model."""
        return encode_lm(conversation, vocab, self.segment_size, response_only=response_only)

    def _memory_enabled(self, mode: Optional[Architecture]) -> bool:
        mode = mode or self.architecture
        if not mode.is_language_model:
            raise ConfigurationError(f"{mode} is not a language-model mode")
        if mode.uses_memory and self.ntm is None:
            raise ConfigurationError(f"A {self.architecture} model cannot run in {mode} mode")
        return mode.uses_memory

    def start(self, mode: Optional[Architecture] = None) -> LMCursor:
        """Return the cursor before the first token.

        Without memory an NTM-LM model conditions on a zero read vector, which
        disconnects every NTM parameter from the output.
        """
        memory = self._memory_enabled(mode)
        read: Optional[Tensor] = None
        state: Optional[NTMState] = None
        if memory:
            assert self.ntm is not None
            read, state = self.initial_read, self.ntm.initial_state()
        elif self.read_size:
            read = constant(np.zeros(self.read_size, dtype=self.dtype))
        return LMCursor(self.gru.zero_state(), read, state)

    def advance(self, cursor: LMCursor, token: int) -> tuple[Tensor, LMCursor]:
        """Consume one token and return the logits predicting the next one."""
        read, memory, steps = cursor.read, cursor.memory, cursor.ntm_steps
        if memory is not None and cursor.position and cursor.position % self.segment_size == 0:
            assert self.ntm is not None
            read, memory = self.ntm.step(cursor.hidden, memory)
            steps += 1
        x = embedding(self.embedding, token)
        if read is not None:
            x = concat(x, read)
        hidden = gru_step(x, cursor.hidden, self.gru)
        head_in = hidden
        if read is not None and self.dims.head_uses_read:
            head_in = concat(hidden, read)
        logits = self.head(head_in)
        return logits, LMCursor(hidden, read, memory, cursor.position + 1, steps)

    def lm_forward(
        self, stream: StreamExample, mode: Optional[Architecture] = None
    ) -> LMOutput:
        """Run the model over a stream, scoring masked next-token predictions."""
        if not stream.ids:
            raise ContractError("lm_forward: stream is empty")
        cursor = self.start(mode)
        logits: list[Tensor] = []
        reads: list[Optional[Tensor]] = []
        for token in stream.ids:
            row, cursor = self.advance(cursor, token)
            logits.append(row)
            reads.append(cursor.read)

        nll: Optional[Tensor] = None
        count = 0
        for row, target, scored in zip(logits, stream.ids[1:], stream.loss_mask):
            if scored:
                term = cross_entropy(row, target)
                nll = term if nll is None else add(nll, term)
                count += 1
        if nll is None:
            nll = constant(np.zeros((), dtype=self.dtype))
        _LOGGER.debug("lm_forward: %d tokens, %d NTM steps", len(stream.ids), cursor.ntm_steps)
        return LMOutput(logits, nll, count, cursor.ntm_steps, reads)

    def forward_loss(
        self, example: StreamExample, mode: Optional[Architecture] = None
    ) -> tuple[Tensor, int]:
        """Summed NLL and number of scored targets."""
        output = self.lm_forward(example, mode)
        return output.nll, output.count

    def next_token_distribution(
        self, prefix: Sequence[int], mode: Optional[Architecture] = None
    ) -> np.ndarray:
        """Distribution over the token following `prefix`.

        Prefixes longer than the conversation cap keep their most recent ids.
        """
        if not prefix:
            raise ContractError("next_token_distribution: prefix is empty")
        ids = tuple(prefix[-CONVERSATION_CAP:])
        stream = StreamExample(ids, (0,) * (len(ids) - 1), self.segment_size)
        with no_grad():
            return self.lm_forward(stream, mode).distributions[-1]

    def sample_continuation(
        self,
        prefix: Sequence[int],
        rng: np.random.Generator,
        *,
        max_len: int,
        temperature: float = 1.0,
        stop: tuple[int, ...] = (EOS_ID, SEP_ID),
    ) -> list[int]:
        """Sample tokens after `prefix` until a stop token or `max_len`."""
        if not prefix:
            raise ContractError("sample_continuation: prefix is empty")
        generated: list[int] = []
        with no_grad():
            cursor = self.start()
            logits: Optional[Tensor] = None
            for token in prefix[-CONVERSATION_CAP:]:
                logits, cursor = self.advance(cursor, token)
            while len(generated) < max_len:
                assert logits is not None
                distribution = softmax_array(logits.data)
                distribution[PAD_ID] = 0.0
                token = sample_index(distribution, rng, temperature)
                if token in stop:
                    break
                generated.append(token)
                logits, cursor = self.advance(cursor, token)
        return generated
