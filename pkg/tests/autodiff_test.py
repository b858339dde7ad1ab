"""Tests for `ntm_dialogue.autodiff`."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest
from ntm_dialogue.autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    binary_cross_entropy_with_logits,
    broadcast_rows,
    concat,
    constant,
    cosine_similarity,
    cross_entropy,
    elementwise,
    embedding,
    grad_enabled,
    matmul,
    mul,
    no_grad,
    one_minus,
    outer,
    parameter,
    power,
    reciprocal,
    reshape,
    roll,
    scale,
    sigmoid,
    slice_last,
    softmax,
    softplus,
    sub,
    tanh,
    total,
)
from ntm_dialogue.exceptions import (
    ContractError,
    DimensionError,
    NtmDialogException,
    TokenIndexError,
)
from ntm_dialogue.gradcheck import numerical_gradient, relative_error

RNG = np.random.default_rng(1234)
W3 = constant(RNG.normal(size=3))
W4 = constant(RNG.normal(size=4))
W9 = constant(RNG.normal(size=9))
W34 = constant(RNG.normal(size=(3, 4)))
W32 = constant(RNG.normal(size=(3, 2)))
TARGETS = (RNG.uniform(size=4) > 0.5).astype(np.float64)


def assert_gradients(fn: Callable[..., Tensor], *arrays: np.ndarray) -> None:
    """Compare analytic gradients of `fn` with central differences."""
    params = [parameter(np.array(a, dtype=np.float64)) for a in arrays]

    def value() -> float:
        with no_grad():
            return fn(*params).item()

    backward(fn(*params), params)
    for p in params:
        assert p.grad is not None
        numeric = numerical_gradient(value, p.data)
        assert relative_error(p.grad, numeric) < 1e-5


@pytest.mark.parametrize(
    ("fn", "shapes"),
    [
        (lambda a, b: total(mul(matmul(a, b), W3)), [(3, 4), (4,)]),
        (lambda a, b: total(mul(matmul(a, b), W32)), [(3, 4), (4, 2)]),
        (lambda x: total(mul(sigmoid(x), W4)), [(4,)]),
        (lambda x: total(mul(tanh(x), W4)), [(4,)]),
        (lambda x: total(mul(softplus(x), W4)), [(4,)]),
        (lambda x: total(mul(softmax(x), W4)), [(4,)]),
        (lambda x: total(mul(softmax(x), W34)), [(3, 4)]),
        (lambda x, y: total(mul(sub(x, one_minus(y)), mul(x, W4))), [(4,), (4,)]),
        (lambda x, s: total(mul(scale(x, s), W4)), [(4,), (1,)]),
        (lambda u, v: total(mul(cosine_similarity(u, v), W3)), [(4,), (3, 4)]),
        (lambda u, v: cosine_similarity(u, v), [(4,), (4,)]),
        (lambda x: cross_entropy(x, 2), [(4,)]),
        (lambda x: binary_cross_entropy_with_logits(x, TARGETS), [(4,)]),
        (
            lambda x, y: total(
                mul(reshape(outer(slice_last(concat(x, y), 1, 4), roll(x, 1)), (9,)), W9)
            ),
            [(3,), (2,)],
        ),
        (lambda v: total(mul(broadcast_rows(v, 3), W34)), [(4,)]),
    ],
)
def test_operation_gradients(
    fn: Callable[..., Tensor], shapes: list[tuple[int, ...]]
) -> None:
    """Test analytic gradients of each operation against finite differences."""
    rng = np.random.default_rng(0)
    assert_gradients(fn, *(rng.normal(size=shape) for shape in shapes))


def test_power_and_reciprocal_gradients() -> None:
    """Test the sharpening building blocks on positive inputs."""
    rng = np.random.default_rng(1)
    x = rng.uniform(0.2, 1.0, size=4)
    gamma = rng.uniform(1.5, 3.0, size=1)
    assert_gradients(lambda x, g: total(mul(power(x, g), W4)), x, gamma)
    assert_gradients(lambda x: total(mul(reciprocal(x), W4)), x)


def test_embedding_gradient_accumulates_rows() -> None:
    """Test that repeated lookups of one row accumulate into that row."""
    table = parameter(np.arange(15, dtype=np.float64).reshape(5, 3))
    loss = total(mul(add(embedding(table, 1), embedding(table, 1)), W3))
    backward(loss, [table])
    assert table.grad is not None
    np.testing.assert_allclose(table.grad[1], 2 * W3.data)
    assert not np.any(table.grad[[0, 2, 3, 4]])


def test_shared_subexpression() -> None:
    """Test the gradient of a graph that reuses one node."""
    x = parameter(np.array([1.0, -2.0, 3.0]))
    y = mul(x, x)
    backward(total(add(y, add(y, x))), [x])
    assert x.grad is not None
    np.testing.assert_allclose(x.grad, 4 * x.data + 1)


def test_backward_resets_unreached_leaves() -> None:
    """Test that listed leaves the root ignores end with zero gradients."""
    x = parameter(np.ones(3))
    unused = parameter(np.ones(2))
    unused.grad = np.full(2, 7.0)
    backward(total(mul(x, x)), [x, unused])
    np.testing.assert_array_equal(unused.grad, np.zeros(2))


def test_backward_is_repeatable() -> None:
    """Test that running backward twice assigns the same gradients."""
    rng = np.random.default_rng(2)
    a = parameter(rng.normal(size=(3, 4)))
    b = parameter(rng.normal(size=4))
    loss = total(tanh(matmul(a, b)))
    backward(loss, [a, b])
    first = (a.grad.copy(), b.grad.copy())  # type: ignore[union-attr]
    backward(loss, [a, b])
    np.testing.assert_array_equal(first[0], a.grad)
    np.testing.assert_array_equal(first[1], b.grad)


def test_backward_requires_scalar_root() -> None:
    """Test that a non-scalar root is rejected."""
    x = parameter(np.ones(3))
    with pytest.raises(ContractError):
        backward(mul(x, x))


def test_tape_is_topological() -> None:
    """Test that every record's inputs precede its output."""
    rng = np.random.default_rng(3)
    a = parameter(rng.normal(size=(3, 4)))
    b = parameter(rng.normal(size=4))
    h = tanh(matmul(a, b))
    tape = Tape.from_root(total(mul(h, sigmoid(h))))
    assert tape.records
    for record in tape.records:
        assert all(i < record.output for i in record.inputs)
    assert {id(leaf) for leaf in tape.leaves} == {id(a), id(b)}


def test_no_grad_records_nothing() -> None:
    """Test that results computed under no_grad are constants."""
    x = parameter(np.ones(3))
    with no_grad():
        assert not grad_enabled()
        y = mul(x, x)
    assert grad_enabled()
    assert not y.requires_grad
    assert y.is_leaf


def test_constants_are_not_recorded() -> None:
    """Test that operations on constants only produce constants."""
    y = mul(constant(np.ones(3)), constant(np.ones(3)))
    assert not y.requires_grad
    assert y.op == "leaf"


def test_results_keep_input_dtype() -> None:
    """Test that single precision flows through operations."""
    x = parameter(np.ones(4, dtype=np.float32))
    assert softmax(tanh(x)).dtype == np.float32
    assert cross_entropy(x, 0).dtype == np.float32


@pytest.mark.parametrize(
    "fn",
    [
        lambda: add(constant(np.ones(3)), constant(np.ones(4))),
        lambda: mul(constant(np.ones((2, 3))), constant(np.ones((3, 2)))),
        lambda: matmul(constant(np.ones((2, 3))), constant(np.ones(4))),
        lambda: scale(constant(np.ones(3)), constant(np.ones(2))),
        lambda: concat(constant(np.ones((2, 3))), constant(np.ones(3))),
        lambda: slice_last(constant(np.ones(3)), 2, 5),
        lambda: reshape(constant(np.ones(6)), (4,)),
        lambda: cosine_similarity(constant(np.ones(3)), constant(np.ones((2, 4)))),
        lambda: cross_entropy(constant(np.ones((2, 2))), 0),
        lambda: binary_cross_entropy_with_logits(constant(np.ones(3)), np.ones(2)),
    ],
)
def test_shape_mismatches_raise(fn: Callable[[], Tensor]) -> None:
    """Test that mismatched shapes raise DimensionError."""
    with pytest.raises(DimensionError) as info:
        fn()
    assert isinstance(info.value, ValueError)
    assert isinstance(info.value, NtmDialogException)


def test_out_of_range_ids_raise() -> None:
    """Test that bad token and target ids raise TokenIndexError."""
    with pytest.raises(TokenIndexError):
        embedding(parameter(np.ones((5, 3))), 5)
    with pytest.raises(TokenIndexError):
        cross_entropy(constant(np.ones(4)), -1)


def test_contract_violations_raise() -> None:
    """Test empty concatenation, bad broadcast and unknown operations."""
    with pytest.raises(ContractError):
        concat()
    with pytest.raises(ContractError):
        broadcast_rows(constant(np.ones(3)), 0)
    with pytest.raises(ContractError):
        elementwise("div", constant(np.ones(3)), constant(np.ones(3)))
    np.testing.assert_array_equal(
        elementwise("sub", constant(np.ones(3)), constant(np.ones(3))).data, np.zeros(3)
    )


def test_softmax_is_a_distribution() -> None:
    """Test softmax rows over random logits, including extreme ones."""
    rng = np.random.default_rng(4)
    for _ in range(100):
        logits = rng.normal(scale=rng.uniform(0.1, 500.0), size=(3, 7))
        out = softmax(constant(logits)).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(3))


def test_cross_entropy_matches_log_softmax() -> None:
    """Test the stable cross-entropy against the direct formula."""
    rng = np.random.default_rng(5)
    for _ in range(100):
        logits = rng.normal(size=6)
        target = int(rng.integers(6))
        expected = -np.log(np.exp(logits[target]) / np.exp(logits).sum())
        assert cross_entropy(constant(logits), target).item() == pytest.approx(expected)


def test_cosine_similarity_bounds() -> None:
    """Test that cosine similarity stays within [-1, 1] and handles zero rows."""
    rng = np.random.default_rng(6)
    for _ in range(100):
        u = rng.normal(size=5)
        v = rng.normal(size=(4, 5))
        v[0] = 0.0
        out = cosine_similarity(constant(u), constant(v)).data
        assert np.all(np.abs(out) <= 1.0)
        assert out[0] == 0.0
