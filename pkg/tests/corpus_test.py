"""Tests for `ntm_dialogue.corpus`."""

from __future__ import annotations

from collections import Counter
from pathlib import Path

import pytest
from ntm_dialogue.const import EOS_ID, PAD, RESERVED_TOKENS, SEP_ID, UNK_ID
from ntm_dialogue.corpus import (
    Conversation,
    StreamExample,
    Vocabulary,
    build_vocab,
    build_vocab_from_counts,
    count_tokens,
    encode_corpus,
    encode_lm,
    encode_seq2seq,
    read_corpus,
    split_validation,
    write_corpus,
)
from ntm_dialogue.exceptions import ConfigurationError, ContractError, SkippedExample

from .samples import fixture_path, letter_conversation, letter_vocabulary


def test_conversation_line_format() -> None:
    """Test parsing and formatting a TAB-separated corpus line."""
    conversation = Conversation.from_line("hi there\thello\n")
    assert conversation.turns == (("hi", "there"), ("hello",))
    assert conversation.to_line() == "hi there\thello"
    assert list(conversation.tokens()) == ["hi", "there", "hello"]
    assert [Conversation.speaker(i) for i in range(3)] == [0, 1, 0]


@pytest.mark.parametrize("line", ["hi\t\thello\n", "\thi\n", "hi\thello\t\n"])
def test_conversation_line_rejects_empty_turns(line: str) -> None:
    """Test that an empty TAB field is an error rather than a speaker shift."""
    with pytest.raises(ConfigurationError):
        Conversation.from_line(line)


def test_read_corpus_skips_blank_lines() -> None:
    """Test reading the fixture corpus."""
    conversations = read_corpus(fixture_path("dialogues.txt"))
    assert len(conversations) == 3
    assert conversations[0].turns[2] == ("good", "to", "hear", ".")
    assert conversations[2].turns == (("hi",),)


def test_write_corpus(tmp_path: Path) -> None:
    """Test that written corpora read back unchanged."""
    path = tmp_path / "corpus.txt"
    conversations = read_corpus(fixture_path("dialogues.txt"))
    write_corpus(path, conversations)
    assert read_corpus(path) == conversations


def test_vocabulary_reserved_ids() -> None:
    """Test reserved entries, lookups and the UNK fallback."""
    vocab = letter_vocabulary()
    assert len(vocab) == 9
    assert vocab.tokens[:4] == list(RESERVED_TOKENS)
    assert vocab.encode(["a", "zzz", "e"]) == [4, UNK_ID, 8]
    assert vocab.decode([4, 8]) == ["a", "e"]
    assert "c" in vocab
    assert PAD in vocab
    with pytest.raises(ConfigurationError):
        Vocabulary(["a", "a"])
    with pytest.raises(ConfigurationError):
        Vocabulary(["<unk>"])


def test_vocabulary_file(tmp_path: Path) -> None:
    """Test saving, loading and rejecting vocabulary files."""
    path = tmp_path / "vocab.txt"
    letter_vocabulary().save(path)
    assert path.read_text(encoding="utf-8").splitlines()[4] == "a"
    assert Vocabulary.load(path) == letter_vocabulary()
    bad = tmp_path / "bad.txt"
    bad.write_text("a\nb\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        Vocabulary.load(bad)


def test_build_vocab_orders_by_frequency() -> None:
    """Test frequency order, first-occurrence ties and the cap."""
    corpus = [Conversation((("x", "y", "z", "y"), ("z", "w")))]
    vocab = build_vocab(corpus, cap=7)
    # y and z tie at 2; y occurs first
    assert vocab.tokens[4:] == ["y", "z", "x"]
    with pytest.raises(ConfigurationError):
        build_vocab(corpus, cap=4)
    with pytest.raises(ContractError):
        build_vocab([], cap=10)


def test_build_vocab_ignores_reserved_tokens() -> None:
    """Test that reserved tokens in the corpus keep their fixed ids."""
    vocab = build_vocab([Conversation((("</s>", "a", "<eos>"),))])
    assert vocab.tokens == list(RESERVED_TOKENS) + ["a"]


def test_build_vocab_from_shards() -> None:
    """Test that merged shard counts equal counting the whole corpus."""
    corpus = read_corpus(fixture_path("dialogues.txt"))
    shards = [count_tokens(corpus[:1]), count_tokens(corpus[1:])]
    assert build_vocab_from_counts(shards, 20) == build_vocab(corpus, 20)
    assert count_tokens(corpus)["is"] == 2
    assert isinstance(shards[0], Counter)


def test_unk_rate() -> None:
    """Test the fraction of out-of-vocabulary tokens."""
    vocab = letter_vocabulary()
    assert vocab.unk_rate([Conversation((("a", "q"), ("b", "<unk>")))]) == 0.5
    assert vocab.unk_rate([]) == 0.0


def test_encode_seq2seq() -> None:
    """Test speaker-tagged history turns and the EOS-terminated response."""
    example = encode_seq2seq(letter_conversation(), letter_vocabulary())
    assert example.turns == ((0, (4, 5)), (1, (6,)))
    assert example.history == (4, 5, SEP_ID, 6)
    assert example.response == (7, 8, EOS_ID)
    assert example.decoder_inputs == (SEP_ID, 7, 8)
    assert example.loss_mask == (1, 1, 1)
    assert example.token_count == 3
    assert example.dropped == 0


def test_encode_seq2seq_caps() -> None:
    """Test that the history keeps its tail and the response overflow is masked."""
    example = encode_seq2seq(
        letter_conversation(), letter_vocabulary(), history_cap=3, response_cap=2
    )
    assert example.turns == ((0, (5,)), (1, (6,)))
    assert example.history == (5, SEP_ID, 6)
    assert example.response == (7, 8, EOS_ID)
    assert example.loss_mask == (1, 1, 0)
    assert example.token_count == 2
    assert example.dropped == 1
    # a separator left at the head of the history is dropped
    short = encode_seq2seq(letter_conversation(), letter_vocabulary(), history_cap=2)
    assert short.turns == ((1, (6,)),)


def test_encode_seq2seq_turns_exclude_the_separator() -> None:
    """Test that long turns keep exactly their own tokens."""
    vocab = letter_vocabulary()
    turn = tuple("abcde" * 4)
    example = encode_seq2seq(Conversation((turn, turn, ("a",))), vocab)
    assert [len(ids) for _, ids in example.turns] == [20, 20]
    assert len(example.history) == 41


def test_encode_seq2seq_skips_single_turns() -> None:
    """Test that a single-turn conversation signals a skip."""
    with pytest.raises(SkippedExample):
        encode_seq2seq(Conversation((("a",),)), letter_vocabulary())


def test_encode_lm() -> None:
    """Test the separator-joined stream and its masks."""
    stream = encode_lm(letter_conversation(), letter_vocabulary(), segment_size=4)
    assert stream.ids == (SEP_ID, 4, 5, SEP_ID, 6, SEP_ID, 7, 8, EOS_ID)
    assert stream.loss_mask == (1,) * 8
    assert stream.segments == [(0, 4), (4, 8), (8, 9)]
    only = encode_lm(letter_conversation(), letter_vocabulary(), response_only=True)
    # targets d, e and EOS
    assert only.loss_mask == (0, 0, 0, 0, 0, 1, 1, 1)
    assert only.token_count == 3


def test_encode_lm_truncates() -> None:
    """Test the conversation cap and the dropped-token count."""
    stream = encode_lm(letter_conversation(), letter_vocabulary(), cap=5)
    assert stream.ids == (SEP_ID, 4, 5, SEP_ID, 6)
    assert len(stream.loss_mask) == 4
    assert stream.dropped == 4


def test_encode_lm_rejects_bad_input() -> None:
    """Test empty conversations and non-positive segment sizes."""
    with pytest.raises(ContractError):
        encode_lm(Conversation(()), letter_vocabulary())
    with pytest.raises(ConfigurationError):
        encode_lm(letter_conversation(), letter_vocabulary(), segment_size=0)


def test_stream_segments_partition() -> None:
    """Test that segments cover every position exactly once."""
    for length in range(1, 30):
        stream = StreamExample(tuple(range(length)), (1,) * (length - 1), segment_size=4)
        covered = [i for start, stop in stream.segments for i in range(start, stop)]
        assert covered == list(range(length))


def test_encode_corpus_skips() -> None:
    """Test that rejected conversations are dropped from the encoding."""
    conversations = read_corpus(fixture_path("dialogues.txt"))
    examples = encode_corpus(conversations, encode_seq2seq, vocab=letter_vocabulary())
    assert len(examples) == 2


def test_split_validation() -> None:
    """Test that the split is deterministic and close to 5 percent."""
    items = list(range(2000))
    train, valid = split_validation(items)
    assert (train, valid) == split_validation(items)
    assert sorted(train + valid) == items
    assert 0.02 < len(valid) / len(items) < 0.09
