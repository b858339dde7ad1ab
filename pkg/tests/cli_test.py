"""Tests for `ntm_dialogue.cli`."""

from __future__ import annotations

from pathlib import Path

import pytest
from ntm_dialogue import cli
from ntm_dialogue.const import Architecture
from ntm_dialogue.corpus import Vocabulary, read_corpus
from ntm_dialogue.gradcheck import GradcheckReport
from ntm_dialogue.synthetic import read_copy_corpus


@pytest.fixture(name="workspace")
def workspace_fixture(tmp_path: Path) -> Path:
    """Write a recall corpus, train a baseline for two steps and return the directory."""
    corpus = tmp_path / "recall.txt"
    assert cli.main(["synth", "--out", str(corpus), "--count", "80"]) == 0
    args = [
        "train",
        "--arch", "lm",
        "--corpus", str(corpus),
        "--vocab", str(tmp_path / "vocab.txt"),
        "--checkpoint", str(tmp_path / "model.ckpt"),
        "--loss-log", str(tmp_path / "loss.tsv"),
        "--max-steps", "2",
        "--batch", "2",
        "--quiet",
    ]  # fmt: skip
    assert cli.main(args) == 0
    return tmp_path


def _model_args(workspace: Path) -> list[str]:
    return [
        "--corpus", str(workspace / "recall.txt"),
        "--vocab", str(workspace / "vocab.txt"),
        "--checkpoint", str(workspace / "model.ckpt"),
        "--quiet",
    ]  # fmt: skip


def test_train_outputs(workspace: Path) -> None:
    """Test that training writes a vocabulary, a loss log and a checkpoint."""
    assert len(Vocabulary.load(workspace / "vocab.txt")) > 4
    lines = (workspace / "loss.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("1\ttrain\t")
    assert lines[1].startswith("2\ttrain\t")
    assert lines[-1].startswith("2\tvalid\t")
    assert (workspace / "model.ckpt").stat().st_size > 0


def test_build_vocab(workspace: Path) -> None:
    """Test writing a vocabulary file on its own."""
    path = workspace / "other_vocab.txt"
    args = ["build-vocab", "--corpus", str(workspace / "recall.txt"), "--vocab", str(path)]
    assert cli.main(args) == 0
    assert Vocabulary.load(path) == Vocabulary.load(workspace / "vocab.txt")


def test_eval(workspace: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Test the perplexity line."""
    assert cli.main(["eval", "--held-out", *_model_args(workspace)]) == 0
    label, value = capsys.readouterr().out.strip().split("\t")
    assert label == "perplexity"
    assert float(value) > 1.0


def test_generate(workspace: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Test sampling replies to a two-turn prompt."""
    conversation = read_corpus(workspace / "recall.txt")[0]
    prompt = "\t".join(" ".join(turn) for turn in conversation.turns[:2])
    args = ["generate", "--prompt", prompt, "--samples", "2", "--max-len", "5"]
    assert cli.main([*args, *_model_args(workspace)]) == 0
    replies = capsys.readouterr().out.splitlines()
    assert len(replies) == 2
    assert all(len(reply.split()) <= 5 for reply in replies)


def test_probe(workspace: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Test the recall accuracy line."""
    assert cli.main(["probe", *_model_args(workspace)]) == 0
    label, value = capsys.readouterr().out.strip().split("\t")
    assert label == "recall"
    assert 0.0 <= float(value) <= 1.0


def test_architecture_mismatch(workspace: Path) -> None:
    """Test that a checkpoint loaded as another architecture is an error."""
    assert cli.main(["eval", "--arch", "ntm-lm", *_model_args(workspace)]) == 2


def test_synth_copy(tmp_path: Path) -> None:
    """Test writing a copy-task corpus."""
    path = tmp_path / "copy.txt"
    args = ["synth", "--task", "copy", "--out", str(path), "--count", "5", "--width", "3"]
    assert cli.main(args) == 0
    tasks = read_copy_corpus(path)
    assert len(tasks) == 5
    assert {task.width for task in tasks} == {3}


def test_missing_corpus() -> None:
    """Test that a command without its corpus fails with status 2."""
    assert cli.main(["train", "--arch", "lm"]) == 2


def test_corrupt_checkpoint(tmp_path: Path) -> None:
    """Test that an unreadable checkpoint fails with status 2."""
    (tmp_path / "model.ckpt").write_bytes(b"not a checkpoint")
    Vocabulary(["x"]).save(tmp_path / "vocab.txt")
    (tmp_path / "recall.txt").write_text("x\tx\n", encoding="utf-8")
    assert cli.main(["eval", *_model_args(tmp_path)]) == 2


def test_gradcheck_failure(
    monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that a failing gradient check exits with status 1."""
    monkeypatch.setattr(
        cli,
        "gradcheck_all",
        lambda architectures, seed: [GradcheckReport(Architecture.LM, {"head.weight": 1.0})],
    )
    assert cli.main(["gradcheck", "--arch", "lm"]) == 1
    out = capsys.readouterr().out
    assert "lm\thead.weight\t1.000e+00" in out
    assert "lm\tFAIL" in out
