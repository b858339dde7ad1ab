"""Dual-NTM sequence-to-sequence dialogue model (D-NTMS) and its Seq2Seq baseline."""

from __future__ import annotations

import logging
import math
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
from .const import (
    DNTMS_FIXED_SEGMENT,
    EOS_ID,
    PAD_ID,
    RESPONSE_CAP,
    SEGMENTS_PER_TURN,
    SEP_ID,
    Architecture,
    SegmentPolicy,
)
from .corpus import Conversation, DialogueExample, Vocabulary, encode_seq2seq
from .exceptions import ConfigurationError, ContractError
from .ntm import NTM, NTMState
from .utils import sample_index, uniform_init

_LOGGER = logging.getLogger(__name__)


def segment_turn(
    tokens: Sequence[int],
    policy: SegmentPolicy = SegmentPolicy.QUARTERS,
    size: int = DNTMS_FIXED_SEGMENT,
) -> list[tuple[int, ...]]:
    """Split a turn into the spans after which the speaker's NTM is written.

    `quarters` cuts spans of ⌈T/4⌉ tokens with the remainder last, so short
    turns give fewer (never empty) spans; `fixed` cuts spans of `size`.
    """
    if not tokens:
        raise ContractError("segment_turn: turn is empty")
    if policy == SegmentPolicy.QUARTERS:
        span = math.ceil(len(tokens) / SEGMENTS_PER_TURN)
    else:
        span = size
    return [tuple(tokens[i : i + span]) for i in range(0, len(tokens), span)]


class EncodedHistory(NamedTuple):
    """Encoder result: context vector and both speakers' NTM states."""

    context: Tensor
    memories: Optional[tuple[NTMState, NTMState]]
    taps: list[Tensor]


class DecodeOutput(NamedTuple):
    """One decoder step."""

    logits: Tensor
    state: Tensor
    memories: Optional[tuple[NTMState, NTMState]]

    @property
    def distribution(self) -> np.ndarray:
        """Return the next-token distribution."""
        return softmax_array(self.logits.data)


class DNTMSModel:
    """Encoder GRU writing to one NTM per speaker, decoder predicting from both."""

    def __init__(
        self,
        dims: ModelDims,
        rng: np.random.Generator,
        dtype: Any = np.float32,
        *,
        architecture: Architecture = Architecture.DNTMS,
    ) -> None:
        """Initialize a model with freshly drawn parameters."""
        if architecture.is_language_model:
            raise ConfigurationError(
                f"{architecture} is not a sequence-to-sequence architecture"
            )
        self.architecture = architecture
        self.dims = dims
        self.dtype = np.dtype(dtype)
        d = dims
        self.encoder_embedding = parameter(
            uniform_init(rng, (d.vocab_size, d.embedding_size), d.embedding_size, dtype)
        )
        self.decoder_embedding = parameter(
            uniform_init(rng, (d.vocab_size, d.embedding_size), d.embedding_size, dtype)
        )
        self.encoder = GRUParams.init(
            d.embedding_size, d.encoder_size, rng, dtype, strict=d.strict_gru
        )
        self.decoder = GRUParams.init(
            d.embedding_size + d.encoder_size, d.decoder_size, rng, dtype, strict=d.strict_gru
        )
        self.init_projection = Linear.init(d.encoder_size, d.decoder_size, rng, dtype)

        self.ntms: Optional[tuple[NTM, NTM]] = None
        if architecture.uses_memory:
            config = d.ntm_config(d.encoder_size)
            self.ntms = (NTM(config, rng, dtype), NTM(config, rng, dtype))
            self.query_projection = Linear.init(d.decoder_size, d.encoder_size, rng, dtype)
            head_in = 2 * d.ntm_output_size
        else:
            head_in = d.decoder_size
        self.head = Linear.init(head_in, d.vocab_size, rng, dtype)
        self.head.weight.data *= d.head_init_scale

    def named_parameters(self) -> dict[str, Tensor]:
        """Return every trainable tensor keyed by a stable dotted name."""
        params = {
            "encoder_embedding": self.encoder_embedding,
            "decoder_embedding": self.decoder_embedding,
        }
        params |= self.encoder.named_parameters("encoder")
        params |= self.decoder.named_parameters("decoder")
        params |= self.init_projection.named_parameters("init_projection")
        if self.ntms is not None:
            params |= self.ntms[0].named_parameters("ntm_a")
            params |= self.ntms[1].named_parameters("ntm_b")
            params |= self.query_projection.named_parameters("query_projection")
        params |= self.head.named_parameters("head")
        return params

    def encode(self, conversation: Conversation, vocab: Vocabulary) -> DialogueExample:
        """Encode a conversation for this model."""
        return encode_seq2seq(conversation, vocab)

    def _memory_enabled(self, mode: Optional[Architecture]) -> bool:
        mode = mode or self.architecture
        if mode.is_language_model:
            raise ConfigurationError(f"{mode} is not a sequence-to-sequence mode")
        if mode != self.architecture:
            # the prediction head is shaped for the architecture it was built for
            raise ConfigurationError(f"A {self.architecture} model cannot run in {mode} mode")
        return mode.uses_memory

    def segments(self, turn: Sequence[int]) -> list[tuple[int, ...]]:
        """Segment a turn with the configured policy."""
        return segment_turn(turn, self.dims.segment_policy, self.dims.segment_size)

    def encode_history(
        self, example: DialogueExample, mode: Optional[Architecture] = None
    ) -> EncodedHistory:
        """Read the history, writing each segment end to the speaker's NTM.

        The GRU state carries across turns and reads the separator between
        them without a write; the inactive speaker's NTM state is left
        untouched. `taps` holds the encoder state at every write.
        """
        if not example.turns:
            raise ContractError("encode_history: dialogue has no turns")
        memory = self._memory_enabled(mode)
        h = self.encoder.zero_state()
        memories: Optional[list[NTMState]] = None
        if memory:
            assert self.ntms is not None
            memories = [ntm.initial_state() for ntm in self.ntms]
        taps: list[Tensor] = []
        for index, (speaker, turn) in enumerate(example.turns):
            if index:
                h = gru_step(embedding(self.encoder_embedding, SEP_ID), h, self.encoder)
            for segment in self.segments(turn):
                for token in segment:
                    h = gru_step(embedding(self.encoder_embedding, token), h, self.encoder)
                taps.append(h)
                if memories is not None:
                    assert self.ntms is not None
                    # the step output is not used while encoding
                    _, memories[speaker] = self.ntms[speaker].step(h, memories[speaker])
        return EncodedHistory(
            h, None if memories is None else (memories[0], memories[1]), taps
        )

    def initial_decoder_state(self, context: Tensor) -> Tensor:
        """Project the context into the decoder's hidden space."""
        return self.init_projection(context)

    def decode_step(
        self,
        y_prev: int,
        context: Tensor,
        state: Tensor,
        memories: Optional[tuple[NTMState, NTMState]],
    ) -> DecodeOutput:
        """Advance the decoder and predict the next token.

        The decoder GRU consumes `embed(y_prev) ⊕ c`. With memories, both NTMs
        are queried with the previous decoder state and their outputs are fused
        by the head; without, the head reads the new decoder state.
        """
        new_state = gru_step(
            concat(embedding(self.decoder_embedding, y_prev), context), state, self.decoder
        )
        if memories is None:
            return DecodeOutput(self.head(new_state), new_state, None)
        assert self.ntms is not None
        query = self.query_projection(state)
        write = not self.dims.read_only_decode
        out_a, memory_a = self.ntms[0].step(query, memories[0], write=write)
        out_b, memory_b = self.ntms[1].step(query, memories[1], write=write)
        logits = self.head(concat(out_a, out_b))
        return DecodeOutput(logits, new_state, (memory_a, memory_b))

    def teacher_forced(
        self, example: DialogueExample, mode: Optional[Architecture] = None
    ) -> list[Tensor]:
        """Return the logits of every response position under teacher forcing."""
        if not example.response:
            raise ContractError("forward_loss: response is empty")
        encoded = self.encode_history(example, mode)
        state = self.initial_decoder_state(encoded.context)
        memories = encoded.memories
        logits: list[Tensor] = []
        for y_prev in example.decoder_inputs:
            step = self.decode_step(y_prev, encoded.context, state, memories)
            logits.append(step.logits)
            state, memories = step.state, step.memories
        return logits

    def forward_loss(
        self, example: DialogueExample, mode: Optional[Architecture] = None
    ) -> tuple[Tensor, int]:
        """Teacher-forced summed NLL over the scored response tokens."""
        loss: Optional[Tensor] = None
        count = 0
        for logits, target, scored in zip(
            self.teacher_forced(example, mode), example.response, example.loss_mask
        ):
            if scored:
                term = cross_entropy(logits, target)
                loss = term if loss is None else add(loss, term)
                count += 1
        if loss is None:
            loss = constant(np.zeros((), dtype=self.dtype))
        return loss, count

    def sample_response(
        self,
        example: DialogueExample,
        rng: np.random.Generator,
        *,
        max_len: int = RESPONSE_CAP,
        temperature: float = 1.0,
    ) -> list[int]:
        """Sample a response token by token until EOS or `max_len`."""
        generated: list[int] = []
        with no_grad():
            encoded = self.encode_history(example)
            state = self.initial_decoder_state(encoded.context)
            memories = encoded.memories
            y_prev = SEP_ID
            while len(generated) < max_len:
                step = self.decode_step(y_prev, encoded.context, state, memories)
                distribution = step.distribution
                distribution[PAD_ID] = 0.0
                y_prev = sample_index(distribution, rng, temperature)
                if y_prev == EOS_ID:
                    break
                generated.append(y_prev)
                state, memories = step.state, step.memories
        _LOGGER.debug("Sampled %d response tokens", len(generated))
        return generated
