"""Command-line interface."""

from __future__ import annotations

import argparse
import asyncio
import contextlib
import dataclasses
import logging
import sys
from collections.abc import Iterator, Sequence
from pathlib import Path
from typing import Any, Optional, TextIO

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelDims, TrainConfig
from .const import (
    BATCH_SIZE,
    COPY_WIDTH,
    EPOCHS,
    LEARNING_RATE,
    RESPONSE_CAP,
    VOCAB_SIZE,
    Architecture,
    Precision,
    SegmentPolicy,
    Task,
)
from .corpus import (
    Conversation,
    Vocabulary,
    build_vocab,
    read_corpus,
    split_validation,
    write_corpus,
)
from .exceptions import ConfigurationError, NtmDialogException
from .gradcheck import gradcheck_all
from .synthetic import (
    gen_copy_corpus,
    gen_recall_dialogues,
    read_copy_corpus,
    write_copy_corpus,
)
from .trainer import Item, Trainer
from .utils import make_rng

_LOGGER = logging.getLogger(__name__)

EXIT_GRADCHECK_FAILED = 1
EXIT_ERROR = 2


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--arch", choices=[str(a) for a in Architecture])
    parser.add_argument("--corpus", type=Path, help="corpus file, one conversation per line")
    parser.add_argument("--vocab", type=Path, help="vocabulary file, one token per line")
    parser.add_argument("--vocab-size", type=int, default=VOCAB_SIZE)
    parser.add_argument("--segment-size", type=int)
    parser.add_argument("--segment-policy", choices=[str(p) for p in SegmentPolicy])
    parser.add_argument("--slots", type=int)
    parser.add_argument("--mem-width", type=int)
    parser.add_argument("--read-heads", type=int)
    parser.add_argument("--write-heads", type=int)
    parser.add_argument("--lr", type=float, help=f"learning rate (default {LEARNING_RATE})")
    parser.add_argument("--batch", type=int, help=f"batch size (default {BATCH_SIZE})")
    parser.add_argument("--epochs", type=int, help=f"epochs (default {EPOCHS})")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--checkpoint", type=Path)
    parser.add_argument("--precision", choices=[str(p) for p in Precision], default="32")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug output")
    parser.add_argument("--quiet", action="store_true", help="hide progress bars")
    return parser


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser for every subcommand."""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="ntm-dialogue", description="NTM dialogue models: train, evaluate, sample."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("build-vocab", parents=[common], help="build a vocabulary file")

    train = commands.add_parser("train", parents=[common], help="train a model")
    train.add_argument("--task", choices=[str(t) for t in Task], default=str(Task.DIALOGUE))
    train.add_argument("--width", type=int, default=COPY_WIDTH, help="copy-task bit width")
    train.add_argument("--max-steps", type=int)
    train.add_argument("--eval-every", type=int, default=0)
    train.add_argument("--shuffle", action="store_true")
    train.add_argument("--resume", type=Path, help="checkpoint to continue from")
    train.add_argument("--clip-norm", type=float)
    train.add_argument("--response-only", action="store_true")
    train.add_argument("--read-only-decode", action="store_true")
    train.add_argument("--loss-log", default="-", help="loss log path ('-' for stdout)")

    evaluate = commands.add_parser("eval", parents=[common], help="per-word perplexity")
    evaluate.add_argument("--held-out", action="store_true", help="only the validation split")

    generate = commands.add_parser("generate", parents=[common], help="sample a response")
    generate.add_argument("--prompt", required=True, help="prompt turns separated by TAB")
    generate.add_argument("--max-len", type=int, default=RESPONSE_CAP)
    generate.add_argument("--temperature", type=float, default=1.0)
    generate.add_argument("--samples", type=int, default=1)

    commands.add_parser("gradcheck", parents=[common], help="finite-difference check")

    synth = commands.add_parser("synth", parents=[common], help="write a synthetic corpus")
    synth.add_argument("--task", choices=[str(t) for t in Task], default=str(Task.DIALOGUE))
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--count", type=int, default=10_000)
    synth.add_argument("--max-length", type=int, default=10)
    synth.add_argument("--width", type=int, default=COPY_WIDTH)

    commands.add_parser("probe", parents=[common], help="recall accuracy on a corpus")
    return parser


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigurationError(f"{args.command} needs {', '.join(missing)}")


def _options(**values: Any) -> dict[str, Any]:
    return {k: v for k, v in values.items() if v is not None}


def _train_config(args: argparse.Namespace, vocab_size: int) -> TrainConfig:
    architecture = Architecture(args.arch)
    task = Task(args.task)
    dims = ModelDims.for_architecture(
        architecture,
        vocab_size,
        segment_size=args.segment_size,
        segment_policy=None if args.segment_policy is None else SegmentPolicy(args.segment_policy),
        slots=args.slots,
        width=args.mem_width,
        read_heads=args.read_heads,
        write_heads=args.write_heads,
        read_only_decode=args.read_only_decode,
    )
    return TrainConfig(
        architecture,
        dims,
        task=task,
        seed=args.seed,
        precision=Precision(args.precision),
        eval_every=args.eval_every,
        shuffle=args.shuffle,
        response_only=args.response_only,
        extra={"copy_width": args.width} if task == Task.COPY else {},
        **_options(
            learning_rate=args.lr,
            batch_size=args.batch,
            epochs=args.epochs,
            max_steps=args.max_steps,
            clip_norm=args.clip_norm,
        ),
    )


def _load_or_build_vocab(
    args: argparse.Namespace, conversations: Sequence[Conversation]
) -> Vocabulary:
    if args.vocab is not None and args.vocab.exists():
        return Vocabulary.load(args.vocab)
    vocab = build_vocab(conversations, args.vocab_size)
    if args.vocab is not None:
        vocab.save(args.vocab)
        _LOGGER.info("Vocabulary of %d tokens written to %s", len(vocab), args.vocab)
    return vocab


def _load_trainer(args: argparse.Namespace) -> Trainer:
    _require(args, "checkpoint", "vocab")
    expected = None if args.arch is None else Architecture(args.arch)
    checkpoint = load_checkpoint(args.checkpoint, expected)
    vocab = Vocabulary.load(args.vocab)
    return Trainer.from_checkpoint(checkpoint, vocab, progress=not args.quiet)


@contextlib.contextmanager
def _output(path: str) -> Iterator[TextIO]:
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as handle:
            yield handle


def cmd_build_vocab(args: argparse.Namespace) -> int:
    """Build a vocabulary from the training split of a corpus."""
    _require(args, "corpus", "vocab")
    train, _ = split_validation(read_corpus(args.corpus))
    vocab = build_vocab(train, args.vocab_size)
    vocab.save(args.vocab)
    _LOGGER.info("Vocabulary of %d tokens written to %s", len(vocab), args.vocab)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train (or resume training) and write the loss log and checkpoint."""
    _require(args, "corpus")
    items: Sequence[Item]
    vocab: Optional[Vocabulary] = None
    if args.task == Task.COPY:
        items = read_copy_corpus(args.corpus)
    else:
        items = read_corpus(args.corpus)
    train, valid = split_validation(items)
    vocab_size = args.width
    if args.task != Task.COPY:
        vocab = _load_or_build_vocab(args, train)  # type: ignore[arg-type]
        vocab_size = len(vocab)

    if args.resume is not None:
        expected = None if args.arch is None else Architecture(args.arch)
        checkpoint = load_checkpoint(args.resume, expected)
        checkpoint.config = dataclasses.replace(
            checkpoint.config, **_options(max_steps=args.max_steps, epochs=args.epochs)
        )
        trainer = Trainer.from_checkpoint(checkpoint, vocab, progress=not args.quiet)
    else:
        _require(args, "arch")
        trainer = Trainer(
            _train_config(args, vocab_size),
            vocab=vocab,
            vocab_path=None if args.vocab is None else str(args.vocab),
            progress=not args.quiet,
        )

    with _output(args.loss_log) as loss_log:
        asyncio.run(trainer.train(train, valid, loss_log=loss_log))
    if args.checkpoint is not None:
        save_checkpoint(args.checkpoint, trainer.checkpoint())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Print the per-word perplexity of a checkpoint on a corpus."""
    _require(args, "corpus")
    trainer = _load_trainer(args)
    conversations = read_corpus(args.corpus)
    if args.held_out:
        _, conversations = split_validation(conversations)
    perplexity = asyncio.run(trainer.evaluate_perplexity(conversations))
    print(f"perplexity\t{perplexity:.4f}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    """Print sampled responses to a prompt."""
    trainer = _load_trainer(args)
    prompt = Conversation.from_line(args.prompt)
    rng = make_rng(args.seed)
    for _ in range(args.samples):
        tokens = trainer.generate(
            prompt, max_len=args.max_len, temperature=args.temperature, rng=rng
        )
        print(" ".join(tokens))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Check gradients of one or all architectures; exit 1 on failure."""
    architectures = tuple(Architecture) if args.arch is None else (Architecture(args.arch),)
    reports = gradcheck_all(architectures, seed=args.seed)
    for report in reports:
        for name, error in report.errors.items():
            print(f"{report.architecture}\t{name}\t{error:.3e}")
        status = "PASS" if report.passed else "FAIL"
        print(f"{report.architecture}\t{status}\tworst {report.worst:.3e}")
    return 0 if all(r.passed for r in reports) else EXIT_GRADCHECK_FAILED


def cmd_synth(args: argparse.Namespace) -> int:
    """Write a copy-task or recall-dialogue corpus."""
    if args.task == Task.COPY:
        tasks = gen_copy_corpus(args.count, args.max_length, args.width, args.seed)
        write_copy_corpus(args.out, tasks)
    else:
        write_corpus(args.out, gen_recall_dialogues(args.count, args.seed))
    _LOGGER.info("Wrote %d %s examples to %s", args.count, args.task, args.out)
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    """Print the recall accuracy of a checkpoint on recall dialogues."""
    _require(args, "corpus")
    trainer = _load_trainer(args)
    _, held_out = split_validation(read_corpus(args.corpus))
    print(f"recall\t{trainer.probe(held_out):.4f}")
    return 0


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "probe": cmd_probe,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (NtmDialogException, OSError) as ex:
        _LOGGER.error("%s", ex)
        return EXIT_ERROR
