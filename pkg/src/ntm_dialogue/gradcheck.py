"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from typing import NamedTuple, Union

import numpy as np

from .autodiff import Tensor, backward, constant, no_grad, scale
from .config import ModelDims
from .const import (
    GRADCHECK_FLOOR,
    GRADCHECK_STEP,
    GRADCHECK_TOLERANCE,
    RESERVED_TOKENS,
    Architecture,
)
from .corpus import Conversation, DialogueExample, StreamExample, Vocabulary
from .dntms import DNTMSModel
from .exceptions import GradientCheckError
from .ntmlm import NTMLMModel
from .utils import make_rng

_LOGGER = logging.getLogger(__name__)

TINY_VOCAB_SIZE = 11


class GradcheckReport(NamedTuple):
    """Worst relative error per parameter tensor."""

    architecture: Architecture
    errors: dict[str, float]
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def worst(self) -> float:
        """Return the largest relative error."""
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        """Return `True` if every error is within tolerance."""
        return self.worst < self.tolerance

    def failures(self) -> dict[str, float]:
        """Return the parameters whose error exceeds the tolerance."""
        return {name: e for name, e in self.errors.items() if e >= self.tolerance}


def numerical_gradient(
    fn: Callable[[], float], array: np.ndarray, step: float = GRADCHECK_STEP
) -> np.ndarray:
    """Central differences of `fn` with respect to every entry of `array`.

    `array` is perturbed in place and restored entry by entry.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = fn()
        flat[i] = original - step
        lower = fn()
        flat[i] = original
        out[i] = (upper - lower) / (2 * step)
    return grad


def relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = GRADCHECK_FLOOR
) -> float:
    """Largest `|a − n| / max(|a| + |n|, floor)` over all entries."""
    if not analytic.size:
        return 0.0
    diff = np.abs(analytic - numeric)
    denominator = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(diff / denominator))


def tiny_vocabulary(size: int = TINY_VOCAB_SIZE) -> Vocabulary:
    """Return a vocabulary of `size` entries with tokens `w4`, `w5`, …"""
    return Vocabulary(f"w{i}" for i in range(len(RESERVED_TOKENS), size))


def tiny_conversation(rng: np.random.Generator, vocab: Vocabulary) -> Conversation:
    """Draw a short three-turn conversation over `vocab`."""
    words = vocab.tokens[len(RESERVED_TOKENS) :]
    lengths = (3, 3, 2)
    return Conversation(
        tuple(tuple(words[int(i)] for i in rng.integers(len(words), size=n)) for n in lengths)
    )


def gradcheck(
    architecture: Architecture,
    *,
    seed: int = 0,
    tolerance: float = GRADCHECK_TOLERANCE,
    step: float = GRADCHECK_STEP,
    strict: bool = False,
) -> GradcheckReport:
    """Compare every parameter gradient of a tiny float64 model to finite differences.

    The loss is the per-token mean over one random conversation. With `strict`
    a failing check raises `GradientCheckError`.
    """
    rng = make_rng(seed)
    vocab = tiny_vocabulary()
    dims = ModelDims.tiny(architecture, len(vocab))
    conversation = tiny_conversation(rng, vocab)
    model: Union[DNTMSModel, NTMLMModel]
    example: Union[DialogueExample, StreamExample]
    if architecture.is_language_model:
        model = NTMLMModel(dims, rng, np.float64, architecture=architecture)
    else:
        model = DNTMSModel(dims, rng, np.float64, architecture=architecture)
    example = model.encode(conversation, vocab)

    def mean_loss() -> Tensor:
        loss, count = model.forward_loss(example)  # type: ignore[arg-type]
        return scale(loss, constant(np.array([1.0 / count])))

    def value() -> float:
        with no_grad():
            return mean_loss().item()

    params = model.named_parameters()
    backward(mean_loss(), params.values())
    errors: dict[str, float] = {}
    for name, p in params.items():
        assert p.grad is not None
        analytic = p.grad.copy()
        errors[name] = relative_error(analytic, numerical_gradient(value, p.data, step))
        _LOGGER.debug("%s: relative error %.3e", name, errors[name])

    report = GradcheckReport(architecture, errors, tolerance)
    if report.passed:
        _LOGGER.info("Gradient check for %s passed (worst %.3e)", architecture, report.worst)
    else:
        _LOGGER.error("Gradient check for %s failed: %s", architecture, report.failures())
        if strict:
            raise GradientCheckError(
                f"{architecture}: {len(report.failures())} parameters exceed {tolerance}"
            )
    return report


def gradcheck_all(
    architectures: Iterable[Architecture] = tuple(Architecture), *, seed: int = 0
) -> list[GradcheckReport]:
    """Run `gradcheck` for several architectures."""
    return [gradcheck(a, seed=seed) for a in architectures]
