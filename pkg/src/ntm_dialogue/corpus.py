"""Corpus files, vocabulary and the seq2seq / language-model encodings."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TypeVar, Union

from .const import (
    CONVERSATION_CAP,
    EOS_ID,
    HISTORY_CAP,
    LM_SEGMENT_SIZE,
    RESERVED_TOKENS,
    RESPONSE_CAP,
    SEP_ID,
    UNK,
    UNK_ID,
    VOCAB_SIZE,
)
from .exceptions import ConfigurationError, ContractError, SkippedExample
from .utils import is_validation_index

_LOGGER = logging.getLogger(__name__)

UNK_WARNING_RATE = 0.05

ExampleT = TypeVar("ExampleT")
ItemT = TypeVar("ItemT")


@dataclass(frozen=True)
class Conversation:
    """Alternating two-speaker turns; turn `i` belongs to speaker `i % 2`."""

    turns: tuple[tuple[str, ...], ...]

    @classmethod
    def from_line(cls, line: str) -> Conversation:
        """Parse one corpus line: turns split by TAB, tokens by single spaces.

        An empty TAB field would shift the speaker of every later turn, so it
        is rejected.
        """
        fields = line.rstrip("\r\n").split("\t")
        if not all(fields):
            raise ConfigurationError(f"Empty turn in corpus line {line.rstrip()!r}")
        return cls(tuple(tuple(field.split(" ")) for field in fields))

    def to_line(self) -> str:
        """Format as one corpus line."""
        return "\t".join(" ".join(turn) for turn in self.turns)

    @staticmethod
    def speaker(turn_index: int) -> int:
        """Return the speaker parity of a turn."""
        return turn_index % 2

    def tokens(self) -> Iterator[str]:
        """Iterate every token in order."""
        for turn in self.turns:
            yield from turn


def read_corpus(path: Union[str, Path]) -> list[Conversation]:
    """Read a UTF-8 corpus file, skipping blank lines."""
    with open(path, encoding="utf-8") as handle:
        conversations = [Conversation.from_line(line) for line in handle if line.strip()]
    _LOGGER.debug("Read %d conversations from %s", len(conversations), path)
    return conversations


def write_corpus(path: Union[str, Path], conversations: Iterable[Conversation]) -> None:
    """Write conversations one per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for conversation in conversations:
            handle.write(conversation.to_line() + "\n")


def split_validation(items: Sequence[ItemT]) -> tuple[list[ItemT], list[ItemT]]:
    """Split into (train, valid) by a hash of each item's index."""
    train: list[ItemT] = []
    valid: list[ItemT] = []
    for index, item in enumerate(items):
        (valid if is_validation_index(index) else train).append(item)
    return train, valid


class Vocabulary:
    """Token ↔ id map; ids 0..3 are the reserved tokens."""

    def __init__(self, tokens: Iterable[str] = ()) -> None:
        self._id_to_token: list[str] = list(RESERVED_TOKENS)
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for token in tokens:
            if token in self._token_to_id:
                raise ConfigurationError(f"Duplicate vocabulary entry {token!r}")
            self._token_to_id[token] = len(self._id_to_token)
            self._id_to_token.append(token)

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: object) -> bool:
        return token in self._token_to_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._id_to_token == other._id_to_token

    @property
    def tokens(self) -> list[str]:
        """Return every token in id order."""
        return list(self._id_to_token)

    def id(self, token: str) -> int:
        """Return the id of `token`, or the UNK id."""
        return self._token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        """Map tokens to ids."""
        return [self._token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Map ids back to tokens."""
        return [self._id_to_token[i] for i in ids]

    def unk_rate(self, conversations: Iterable[Conversation]) -> float:
        """Fraction of corpus tokens that fall outside the vocabulary."""
        seen = unknown = 0
        for conversation in conversations:
            for token in conversation.tokens():
                seen += 1
                if token == UNK or token not in self._token_to_id:
                    unknown += 1
        return unknown / seen if seen else 0.0

    def save(self, path: Union[str, Path]) -> None:
        """Write one token per line; the line number is the id."""
        with open(path, "w", encoding="utf-8") as handle:
            handle.writelines(token + "\n" for token in self._id_to_token)

    @classmethod
    def load(cls, path: Union[str, Path]) -> Vocabulary:
        """Read a vocabulary file written by `save`."""
        with open(path, encoding="utf-8") as handle:
            tokens = [line.rstrip("\n") for line in handle]
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ConfigurationError(f"{path} does not start with the reserved tokens")
        return cls(tokens[len(RESERVED_TOKENS) :])


def count_tokens(conversations: Iterable[Conversation]) -> Counter[str]:
    """Count token frequencies, remembering first-occurrence order."""
    counts: Counter[str] = Counter()
    for conversation in conversations:
        counts.update(conversation.tokens())
    return counts


def build_vocab_from_counts(
    shard_counts: Sequence[Counter[str]], cap: int = VOCAB_SIZE
) -> Vocabulary:
    """Merge per-shard counts in shard order and keep the most frequent tokens."""
    if cap <= len(RESERVED_TOKENS):
        raise ConfigurationError(f"Vocabulary cap {cap} leaves no room past the reserved tokens")
    merged: Counter[str] = Counter()
    for counts in shard_counts:
        merged.update(counts)
    if not merged:
        raise ContractError("Cannot build a vocabulary from an empty corpus")
    for reserved in RESERVED_TOKENS:
        merged.pop(reserved, None)
    # most_common sorts stably, so ties keep first-occurrence order
    kept = [token for token, _ in merged.most_common(cap - len(RESERVED_TOKENS))]
    _LOGGER.info("Vocabulary keeps %d of %d distinct tokens", len(kept), len(merged))
    return Vocabulary(kept)


def build_vocab(corpus: Iterable[Conversation], cap: int = VOCAB_SIZE) -> Vocabulary:
    """Build a vocabulary from the most frequent corpus tokens."""
    return build_vocab_from_counts([count_tokens(corpus)], cap)


# ---------------------------------------------------------------------------
# Encodings


@dataclass(frozen=True)
class DialogueExample:
    """Seq2seq encoding: speaker-tagged history turns and a response.

    Turns hold only their own tokens; the encoder reads the utterance separator
    between them. `loss_mask` has one entry per response target and zeroes the
    targets past the response cap.
    """

    turns: tuple[tuple[int, tuple[int, ...]], ...]
    response: tuple[int, ...]
    loss_mask: tuple[int, ...]
    dropped: int = 0

    @property
    def history(self) -> tuple[int, ...]:
        """Return the history ids joined by the separator."""
        ids: list[int] = []
        for index, (_, turn) in enumerate(self.turns):
            if index:
                ids.append(SEP_ID)
            ids.extend(turn)
        return tuple(ids)

    @property
    def decoder_inputs(self) -> tuple[int, ...]:
        """Return the teacher-forced decoder inputs, starting from the separator."""
        return (SEP_ID,) + self.response[:-1]

    @property
    def token_count(self) -> int:
        """Return the number of scored response tokens."""
        return sum(self.loss_mask)


@dataclass(frozen=True)
class StreamExample:
    """Language-model encoding of a whole conversation.

    `ids` opens with the separator and closes with EOS when it fits; position
    `t` predicts `ids[t + 1]` and `loss_mask[t]` says whether it is scored.
    """

    ids: tuple[int, ...]
    loss_mask: tuple[int, ...]
    segment_size: int = LM_SEGMENT_SIZE
    dropped: int = 0

    @property
    def segments(self) -> list[tuple[int, int]]:
        """Return `(start, stop)` spans partitioning `ids`."""
        size = self.segment_size
        return [(start, min(start + size, len(self.ids))) for start in range(0, len(self.ids), size)]

    @property
    def token_count(self) -> int:
        """Return the number of scored targets."""
        return sum(self.loss_mask)


def encode_seq2seq(
    conversation: Conversation,
    vocab: Vocabulary,
    *,
    history_cap: int = HISTORY_CAP,
    response_cap: int = RESPONSE_CAP,
) -> DialogueExample:
    """Split into history and final-turn response, applying the length caps.

    The separator-joined history keeps its most recent `history_cap` ids; a
    separator left at its head is dropped. The response (final turn plus EOS)
    scores its first `response_cap` targets and masks the rest.
    """
    if len(conversation.turns) < 2:
        raise SkippedExample("Conversation has a single turn and no history")

    # (turn index, token id); separators carry index -1
    tagged: list[tuple[int, int]] = []
    for index, turn in enumerate(conversation.turns[:-1]):
        if index:
            tagged.append((-1, SEP_ID))
        tagged.extend((index, token_id) for token_id in vocab.encode(turn))
    tagged = tagged[-history_cap:]

    turns: list[tuple[int, list[int]]] = []
    current = -1
    for index, token_id in tagged:
        if index < 0:
            continue
        if index != current:
            turns.append((conversation.speaker(index), []))
            current = index
        turns[-1][1].append(token_id)

    response = vocab.encode(conversation.turns[-1]) + [EOS_ID]
    scored = min(len(response), response_cap)
    return DialogueExample(
        turns=tuple((speaker, tuple(ids)) for speaker, ids in turns),
        response=tuple(response),
        loss_mask=(1,) * scored + (0,) * (len(response) - scored),
        dropped=len(response) - scored,
    )


def encode_lm(
    conversation: Conversation,
    vocab: Vocabulary,
    segment_size: int = LM_SEGMENT_SIZE,
    *,
    cap: int = CONVERSATION_CAP,
    response_only: bool = False,
) -> StreamExample:
    """Join every turn into one stream, truncated after `cap` ids.

    With `response_only` only the targets of the final turn (and its EOS) are
    scored, which puts language models on the same footing as seq2seq models.
    """
    if not conversation.turns:
        raise ContractError("Cannot encode an empty conversation")
    if segment_size < 1:
        raise ConfigurationError(f"Segment size must be positive, got {segment_size}")

    ids = [SEP_ID]
    for index, turn in enumerate(conversation.turns):
        if index:
            ids.append(SEP_ID)
        ids.extend(vocab.encode(turn))
    response_start = len(ids) - len(conversation.turns[-1])
    ids.append(EOS_ID)

    kept = ids[:cap]
    targets = range(1, len(kept))
    if response_only:
        mask = tuple(int(t >= response_start) for t in targets)
    else:
        mask = (1,) * len(targets)
    return StreamExample(
        ids=tuple(kept),
        loss_mask=mask,
        segment_size=segment_size,
        dropped=len(ids) - len(kept),
    )


def encode_corpus(
    conversations: Iterable[Conversation],
    encoder: Callable[..., ExampleT],
    **kwargs: Any,
) -> list[ExampleT]:
    """Encode a corpus, logging and skipping conversations the encoder rejects."""
    encoded: list[ExampleT] = []
    skipped = 0
    for conversation in conversations:
        try:
            encoded.append(encoder(conversation, **kwargs))
        except SkippedExample as ex:
            skipped += 1
            _LOGGER.debug("Skipping conversation: %s", ex)
    if skipped:
        _LOGGER.warning("Skipped %d conversations that could not be encoded", skipped)
    return encoded


def check_unk_rate(vocab: Vocabulary, conversations: Sequence[Conversation]) -> float:
    """Report the UNK rate of a corpus under `vocab`."""
    rate = vocab.unk_rate(conversations)
    log_method = _LOGGER.warning if rate > UNK_WARNING_RATE else _LOGGER.info
    log_method("UNK rate %.2f%% over %d conversations", 100 * rate, len(conversations))
    return rate
