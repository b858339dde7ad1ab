"""Test utils module."""

from __future__ import annotations

import numpy as np
from ntm_dialogue import utils

ABC_DIGEST = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_sha256_digest() -> None:
    """Test the digest of chunks against a known vector."""
    assert utils.sha256_digest(b"abc").hex() == ABC_DIGEST
    assert utils.sha256_digest(b"a", b"bc").hex() == ABC_DIGEST


def test_is_validation_index() -> None:
    """Test that the held-out assignment depends only on the index."""
    picked = [i for i in range(1000) if utils.is_validation_index(i)]
    assert picked == [i for i in range(1000) if utils.is_validation_index(i)]
    assert not any(utils.is_validation_index(i, percent=0) for i in range(100))
    assert all(utils.is_validation_index(i, percent=100) for i in range(100))


def test_rng_state_restores() -> None:
    """Test that a restored generator continues the same stream."""
    rng = utils.make_rng(7)
    rng.normal(size=3)
    state = utils.rng_state(rng)
    expected = rng.normal(size=5)
    np.testing.assert_array_equal(utils.restore_rng(state).normal(size=5), expected)


def test_uniform_init() -> None:
    """Test the initialization bound and dtype."""
    values = utils.uniform_init(utils.make_rng(0), (50, 16), 16, np.float32)
    assert values.dtype == np.float32
    assert np.all(np.abs(values) <= 0.25)


def test_sample_index() -> None:
    """Test sampling from degenerate and tempered distributions."""
    rng = utils.make_rng(0)
    assert utils.sample_index(np.array([0.0, 2.0, 0.0]), rng) == 1
    draws = [utils.sample_index(np.array([0.2, 0.8]), rng, temperature=0.05) for _ in range(50)]
    assert set(draws) == {1}
