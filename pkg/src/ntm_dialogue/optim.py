"""Adam optimizer and gradient clipping."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .const import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON
from .exceptions import DimensionError

_LOGGER = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moment estimates and the step counter."""

    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def zeros(cls, params: Mapping[str, Tensor]) -> AdamState:
        """Return zero moments shaped like `params`."""
        return cls(
            first={name: np.zeros_like(p.data) for name, p in params.items()},
            second={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """Apply one bias-corrected Adam update in place and return the state."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: gradient {g.shape} vs parameter {name} {p.shape}")
        m = state.first.setdefault(name, np.zeros_like(p.data))
        v = state.second.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        p.data -= update.astype(p.dtype, copy=False)
    return state


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    """Return the L2 norm of all gradients taken together."""
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most `max_norm`.

    Returns the norm before clipping.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for g in grads.values():
            g *= factor
        _LOGGER.debug("Clipped gradient norm %.4f to %.4f", norm, max_norm)
    return norm
