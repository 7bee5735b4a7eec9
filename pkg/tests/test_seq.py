import math

import gmpy2
import numpy as np
import pytest

from holder_transformer.precision import as_array, extended, to_float, working_context
from holder_transformer.seq import (AttentionHead, BlockSpec, FeedForward, ShapeError,
                                    attention_forward, block_forward, relu, softmax_columns)


def test_softmax_columns_examples():
    P = softmax_columns(np.array([[0.0, math.log(2), 3.0], [0.0, 0.0, 3.0]]))
    np.testing.assert_allclose(P[:, 0], [0.5, 0.5])
    np.testing.assert_allclose(P[:, 1], [2 / 3, 1 / 3])
    np.testing.assert_allclose(P[:, 2], [0.5, 0.5])


def test_softmax_large_scores_do_not_overflow():
    P = softmax_columns(np.array([[1000.0], [0.0]]))
    assert np.all(np.isfinite(P)) and P[0, 0] == 1.0


def test_softmax_rejects_nonfinite():
    with pytest.raises(ValueError):
        softmax_columns(np.array([[np.nan], [0.0]]))


def test_relu_examples():
    np.testing.assert_array_equal(relu(np.array([[-1.0, 2.0]])), [[0.0, 2.0]])
    np.testing.assert_array_equal(relu(np.zeros((2, 3))), np.zeros((2, 3)))
    np.testing.assert_array_equal(relu(np.array([[0.5]])), [[0.5]])


def test_zero_block_is_identity():
    X = np.random.default_rng(0).normal(size=(3, 4))
    head = AttentionHead(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 2)))
    blk = BlockSpec(3, (head,), FeedForward(np.zeros((5, 3)), np.zeros(5), np.zeros((3, 5)), np.zeros(3)))
    np.testing.assert_array_equal(block_forward(blk, X), X)
    np.testing.assert_array_equal(block_forward(BlockSpec(3), X), X)


def test_zero_value_head_is_identity():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(2, 3))
    head = AttentionHead(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), np.zeros((2, 2)), rng.normal(size=(2, 2)))
    np.testing.assert_allclose(attention_forward([head], X), X)


def test_single_neuron_ff_hand_value():
    ff = FeedForward(np.array([[1.0]]), np.zeros(1), np.array([[1.0]]), np.zeros(1))
    out = block_forward(BlockSpec(1, (), ff), np.array([[-1.0, 1.0]]))
    np.testing.assert_array_equal(out, [[-1.0, 2.0]])


def test_shape_errors():
    with pytest.raises(ShapeError):
        FeedForward(np.zeros((2, 3)), np.zeros(3), np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ShapeError):
        block_forward(BlockSpec(2), np.zeros((3, 4)))


def test_weights_are_frozen():
    ff = FeedForward(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    with pytest.raises(ValueError):
        ff.W_1[0, 0] = 2.0


def test_extended_block_matches_double():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(2, 3))
    head = AttentionHead(*(rng.normal(size=(2, 2)) for _ in range(4)))
    ff = FeedForward(rng.normal(size=(4, 2)), rng.normal(size=4), rng.normal(size=(2, 4)), rng.normal(size=2))
    blk = BlockSpec(2, (head,), ff)
    prec = extended(200)
    with working_context(prec):
        out = block_forward(blk, as_array(X, prec), prec)
        assert isinstance(out[0, 0], type(gmpy2.mpfr(1)))
    np.testing.assert_allclose(to_float(out), block_forward(blk, X), rtol=1e-12)


def test_batched_attention_matches_loop():
    rng = np.random.default_rng(3)
    Xs = rng.normal(size=(5, 2, 3))
    head = AttentionHead(*(rng.normal(size=(2, 2)) for _ in range(4)))
    batch = attention_forward([head], Xs)
    for i in range(5):
        np.testing.assert_allclose(batch[i], attention_forward([head], Xs[i]))
