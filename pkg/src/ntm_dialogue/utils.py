"""Utilities."""

from __future__ import annotations

from typing import Any

import numpy as np
from cryptography.hazmat.primitives import hashes

from .const import VALID_FRACTION_PERCENT


def sha256_digest(*chunks: bytes) -> bytes:
    """Return the SHA-256 digest of the concatenated chunks."""
    digest = hashes.Hash(hashes.SHA256())
    for chunk in chunks:
        digest.update(chunk)
    return digest.finalize()


def is_validation_index(index: int, percent: int = VALID_FRACTION_PERCENT) -> bool:
    """Deterministically assign a conversation index to the held-out split."""
    bucket = int.from_bytes(sha256_digest(str(index).encode("utf-8"))[:4], "big")
    return bucket % 100 < percent


def make_rng(seed: int) -> np.random.Generator:
    """Create the seeded generator used for all randomness."""
    return np.random.default_rng(seed)


def rng_state(rng: np.random.Generator) -> dict[str, Any]:
    """Return a JSON-serializable generator state."""
    return rng.bit_generator.state


def restore_rng(state: dict[str, Any]) -> np.random.Generator:
    """Rebuild a generator from `rng_state` output."""
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def uniform_init(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype: Any
) -> np.ndarray:
    """Uniform values in ±1/√fan_in."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def sample_index(
    probabilities: np.ndarray, rng: np.random.Generator, temperature: float = 1.0
) -> int:
    """Draw one index from a (possibly unnormalized) distribution."""
    p = np.asarray(probabilities, dtype=np.float64)
    if temperature != 1.0:
        p = np.power(p, 1.0 / temperature)
    p = p / np.sum(p)
    return int(rng.choice(p.shape[0], p=p))
