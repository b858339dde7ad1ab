"""Training loop, perplexity evaluation, sampling and the recall probe."""

from __future__ import annotations

import asyncio
import dataclasses
import logging
import math
from collections.abc import Mapping, Sequence
from typing import NamedTuple, Optional, TextIO, Union

import numpy as np
from tqdm import tqdm

from .autodiff import Tensor, backward, no_grad
from .checkpoint import Checkpoint, VocabularyReference
from .config import TrainConfig
from .const import EOS_ID, RESPONSE_CAP, SEP_ID, Split, Task
from .corpus import (
    Conversation,
    DialogueExample,
    StreamExample,
    Vocabulary,
    check_unk_rate,
    encode_corpus,
    encode_seq2seq,
)
from .dntms import DNTMSModel
from .exceptions import ConfigurationError, ContractError
from .ntmlm import NTMLMModel
from .optim import AdamState, adam_step, clip_grad_norm
from .prefetch import BatchPrefetcher
from .synthetic import CopyTask, CopyTaskModel, recall_fact
from .utils import make_rng, restore_rng, rng_state

_LOGGER = logging.getLogger(__name__)

EVAL_WORKERS = 4

Model = Union[DNTMSModel, NTMLMModel, CopyTaskModel]
Example = Union[DialogueExample, StreamExample, CopyTask]
Item = Union[Conversation, CopyTask]


class LossRecord(NamedTuple):
    """One line of the loss log."""

    step: int
    split: Split
    loss: float

    def to_line(self) -> str:
        """Format as `step<TAB>split<TAB>loss`."""
        return f"{self.step}\t{self.split}\t{self.loss:.6f}"


def build_model(config: TrainConfig, rng: np.random.Generator) -> Model:
    """Create a freshly initialized model for `config`."""
    if config.task == Task.COPY:
        return CopyTaskModel(
            config.dims,
            config.copy_width,
            rng,
            config.dtype,
            memory=config.architecture.uses_memory,
        )
    if config.architecture.is_language_model:
        return NTMLMModel(config.dims, rng, config.dtype, architecture=config.architecture)
    return DNTMSModel(config.dims, rng, config.dtype, architecture=config.architecture)


def load_parameters(model: Model, parameters: Mapping[str, np.ndarray]) -> None:
    """Copy stored values into the model's parameters."""
    params = model.named_parameters()
    if missing := sorted(set(params) ^ set(parameters)):
        raise ConfigurationError(f"Parameter names differ from the model: {missing[:5]}")
    for name, p in params.items():
        value = parameters[name]
        if value.shape != p.shape:
            raise ConfigurationError(f"{name}: stored shape {value.shape} != {p.shape}")
        p.data = value.astype(p.dtype, copy=True)


class Trainer:
    """Owns a model, its optimizer state and the run's random generator."""

    def __init__(
        self,
        config: TrainConfig,
        *,
        vocab: Optional[Vocabulary] = None,
        model: Optional[Model] = None,
        rng: Optional[np.random.Generator] = None,
        adam: Optional[AdamState] = None,
        step: int = 0,
        vocab_path: Optional[str] = None,
        progress: bool = False,
    ) -> None:
        """Initialize a trainer, building the model when none is given."""
        if config.task == Task.DIALOGUE:
            if vocab is None:
                raise ConfigurationError("Dialogue training needs a vocabulary")
            if len(vocab) != config.dims.vocab_size:
                raise ConfigurationError(
                    f"Vocabulary has {len(vocab)} entries, the model expects "
                    f"{config.dims.vocab_size}"
                )
        self.config = config
        self.vocab = vocab
        self.vocab_path = vocab_path
        self.rng = rng if rng is not None else make_rng(config.seed)
        self.model = model if model is not None else build_model(config, self.rng)
        self.params = self.model.named_parameters()
        self.adam = adam if adam is not None else AdamState.zeros(self.params)
        self.step = step
        self.progress = progress

    @classmethod
    def from_checkpoint(
        cls,
        checkpoint: Checkpoint,
        vocab: Optional[Vocabulary] = None,
        *,
        progress: bool = False,
    ) -> Trainer:
        """Rebuild the trainer a checkpoint was taken from."""
        config = checkpoint.config
        if checkpoint.vocab is not None and vocab is not None:
            checkpoint.vocab.check(vocab)
        model = build_model(config, make_rng(config.seed))
        load_parameters(model, checkpoint.parameters)
        return cls(
            config,
            vocab=vocab,
            model=model,
            rng=restore_rng(checkpoint.rng_state),
            adam=checkpoint.adam,
            step=checkpoint.step,
            vocab_path=None if checkpoint.vocab is None else checkpoint.vocab.path,
            progress=progress,
        )

    def checkpoint(self) -> Checkpoint:
        """Snapshot parameters, optimizer and generator state."""
        adam = dataclasses.replace(
            self.adam,
            first={k: v.copy() for k, v in self.adam.first.items()},
            second={k: v.copy() for k, v in self.adam.second.items()},
        )
        return Checkpoint(
            config=self.config,
            parameters={name: p.data.copy() for name, p in self.params.items()},
            rng_state=rng_state(self.rng),
            step=self.step,
            vocab=None
            if self.vocab is None
            else VocabularyReference.of(self.vocab, self.vocab_path),
            adam=adam,
        )

    # -----------------------------------------------------------------------
    # Encoding

    def encode_example(self, item: Item) -> Example:
        """Encode one conversation (or pass a copy task through)."""
        if isinstance(self.model, CopyTaskModel):
            if not isinstance(item, CopyTask):
                raise ConfigurationError("The copy-task model trains on copy tasks")
            return item
        if not isinstance(item, Conversation):
            raise ConfigurationError("Dialogue models train on conversations")
        assert self.vocab is not None
        if isinstance(self.model, NTMLMModel):
            return self.model.encode(item, self.vocab, response_only=self.config.response_only)
        return self.model.encode(item, self.vocab)

    def encode_batch(self, items: Sequence[Item]) -> list[Example]:
        """Encode items, dropping the ones this architecture cannot use."""
        return encode_corpus(items, self.encode_example)

    # -----------------------------------------------------------------------
    # Training

    def train_step(self, batch: Sequence[Example]) -> float:
        """Run one optimizer step and return the per-token batch loss.

        Each example is differentiated on its own and the gradients summed, so
        no graph outlives its example.
        """
        tokens = sum(example.token_count for example in batch)
        if not tokens:
            raise ContractError("Batch has no scored tokens")
        leaves = list(self.params.values())
        grads = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        total = 0.0
        for example in batch:
            loss, _ = self.model.forward_loss(example)
            total += loss.item()
            backward(loss, leaves)
            for name, p in self.params.items():
                assert p.grad is not None
                grads[name] += p.grad
        for g in grads.values():
            g /= tokens
        if self.config.clip_norm is not None:
            clip_grad_norm(grads, self.config.clip_norm)
        adam_step(self.params, grads, self.adam, self.config.learning_rate)
        return total / tokens

    def _epoch_batches(self, items: Sequence[Item], epoch: int) -> list[list[Item]]:
        order = np.arange(len(items))
        if self.config.shuffle:
            order = np.random.default_rng((self.config.seed, epoch)).permutation(len(items))
        size = self.config.batch_size
        return [
            [items[int(i)] for i in order[start : start + size]]
            for start in range(0, len(items), size)
        ]

    async def train(
        self,
        train_items: Sequence[Item],
        valid_items: Sequence[Item] = (),
        *,
        loss_log: Optional[TextIO] = None,
    ) -> list[LossRecord]:
        """Train for the configured epochs, continuing from `self.step`.

        Every optimizer step appends a `train` record; validation records are
        added every `eval_every` steps and after the last step.
        """
        if not train_items:
            raise ContractError("Training set is empty")
        if self.vocab is not None:
            conversations = [i for i in train_items if isinstance(i, Conversation)]
            if conversations and check_unk_rate(self.vocab, conversations) >= 1.0:
                raise ConfigurationError("No corpus token is in the vocabulary")

        config = self.config
        per_epoch = math.ceil(len(train_items) / config.batch_size)
        total_steps = config.epochs * per_epoch
        if config.max_steps is not None:
            total_steps = min(total_steps, config.max_steps)
        valid = self.encode_batch(valid_items) if valid_items else []
        records: list[LossRecord] = []

        def emit(record: LossRecord) -> None:
            records.append(record)
            if loss_log is not None:
                loss_log.write(record.to_line() + "\n")
                loss_log.flush()

        start_epoch, skip = divmod(self.step, per_epoch)
        _LOGGER.info(
            "Training %s from step %d to %d (%d batches per epoch)",
            config.architecture,
            self.step,
            total_steps,
            per_epoch,
        )
        with tqdm(
            total=total_steps,
            initial=min(self.step, total_steps),
            desc=f"train {config.architecture}",
            unit="step",
            disable=not self.progress,
        ) as bar:
            for epoch in range(start_epoch, config.epochs):
                if self.step >= total_steps:
                    break
                _LOGGER.info("Epoch %d of %d", epoch + 1, config.epochs)
                batches = self._epoch_batches(train_items, epoch)
                if epoch == start_epoch:
                    batches = batches[skip:]
                async with BatchPrefetcher(batches, self.encode_batch) as prefetcher:
                    async for batch in prefetcher:
                        if self.step >= total_steps:
                            break
                        if not batch:
                            _LOGGER.warning("Step %d: every example was skipped", self.step + 1)
                            self.step += 1
                            continue
                        loss = await asyncio.to_thread(self.train_step, batch)
                        self.step += 1
                        emit(LossRecord(self.step, Split.TRAIN, loss))
                        bar.update(1)
                        bar.set_postfix(loss=f"{loss:.3f}")
                        if valid and config.eval_every and self.step % config.eval_every == 0:
                            emit(LossRecord(self.step, Split.VALID, await self.evaluate_loss(valid)))
        if valid and not (config.eval_every and self.step % config.eval_every == 0):
            emit(LossRecord(self.step, Split.VALID, await self.evaluate_loss(valid)))
        return records

    # -----------------------------------------------------------------------
    # Evaluation

    def _score(self, examples: Sequence[Example]) -> tuple[float, int]:
        nll, count = 0.0, 0
        with no_grad():
            for example in examples:
                loss, scored = self.model.forward_loss(example)
                nll += loss.item()
                count += scored
        return nll, count

    async def evaluate_loss(self, examples: Sequence[Example]) -> float:
        """Mean per-token loss over encoded examples.

        Chunks are scored concurrently in worker threads and summed in example
        order, so the result does not depend on scheduling.
        """
        if not examples:
            raise ContractError("Evaluation set is empty")
        size = math.ceil(len(examples) / EVAL_WORKERS)
        chunks = [examples[i : i + size] for i in range(0, len(examples), size)]
        results = await asyncio.gather(*(asyncio.to_thread(self._score, c) for c in chunks))
        nll = sum(r[0] for r in results)
        count = sum(r[1] for r in results)
        if not count:
            raise ContractError("Evaluation set has no scored tokens")
        return nll / count

    async def evaluate_perplexity(self, items: Sequence[Item]) -> float:
        """Per-word perplexity, `exp` of the mean NLL over scored tokens."""
        examples = self.encode_batch(items)
        perplexity = math.exp(await self.evaluate_loss(examples))
        _LOGGER.info("Perplexity %.3f over %d examples", perplexity, len(examples))
        return perplexity

    # -----------------------------------------------------------------------
    # Generation and probing

    def _dialogue_model(self) -> Union[DNTMSModel, NTMLMModel]:
        if isinstance(self.model, CopyTaskModel) or self.vocab is None:
            raise ConfigurationError("Generation needs a dialogue model and its vocabulary")
        return self.model

    def generate(
        self,
        prompt: Conversation,
        *,
        max_len: int = RESPONSE_CAP,
        temperature: float = 1.0,
        rng: Optional[np.random.Generator] = None,
    ) -> list[str]:
        """Sample the next turn after `prompt` with random sampling."""
        model = self._dialogue_model()
        assert self.vocab is not None
        if not prompt.turns:
            raise ContractError("Prompt has no turns")
        rng = rng if rng is not None else self.rng
        if isinstance(model, NTMLMModel):
            prefix = [SEP_ID]
            for turn in prompt.turns:
                prefix += self.vocab.encode(turn) + [SEP_ID]
            ids = model.sample_continuation(
                prefix, rng, max_len=max_len, temperature=temperature
            )
        else:
            example = encode_seq2seq(Conversation(prompt.turns + ((),)), self.vocab)
            ids = model.sample_response(example, rng, max_len=max_len, temperature=temperature)
        return self.vocab.decode(ids)

    def probe(self, conversations: Sequence[Conversation]) -> float:
        """Fraction of recall dialogues whose fact token is the top prediction."""
        model = self._dialogue_model()
        assert self.vocab is not None
        hits = tested = 0
        with no_grad():
            for conversation in conversations:
                fact = self.vocab.id(recall_fact(conversation))
                logits: Tensor
                if isinstance(model, NTMLMModel):
                    stream = model.encode(conversation, self.vocab)
                    if stream.ids[-1] != EOS_ID:
                        continue
                    logits = model.lm_forward(stream).logits[len(stream.ids) - 3]
                else:
                    example = encode_seq2seq(conversation, self.vocab)
                    if example.dropped:
                        continue
                    logits = model.teacher_forced(example)[len(example.response) - 2]
                tested += 1
                hits += int(np.argmax(logits.data)) == fact
        if not tested:
            raise ContractError("No conversation could be probed")
        _LOGGER.info("Recall probe: %d of %d", hits, tested)
        return hits / tested
