"""Sequence-matrix arithmetic and single Transformer blocks.

A sequence matrix is a ``d x L`` array whose columns are tokens. Both block
halves keep their residual connections; there is no switch to remove them.

    Attn(X) = X + sum_h W_O W_V X softmax_col((W_K X)^T W_Q X)
    FF(X)   = X + W_2 relu(W_1 X + b_1 1^T) + b_2 1^T
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import gmpy2
import numpy as np

from .precision import DOUBLE, Precision, as_array, exp_array, relu as _relu

__all__ = [
    "AttentionHead",
    "FeedForward",
    "BlockSpec",
    "as_seq",
    "softmax_columns",
    "relu",
    "attention_forward",
    "ff_forward",
    "block_forward",
    "ShapeError",
]


class ShapeError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=a.dtype if a.dtype == object else np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AttentionHead:
    """One softmax head. ``W_K, W_Q, W_V`` are ``m x d``; ``W_O`` is ``d x m``."""

    W_K: np.ndarray
    W_Q: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray

    def __post_init__(self):
        for name in ("W_K", "W_Q", "W_V", "W_O"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name))))
        m, d = self.W_K.shape
        if self.W_Q.shape != (m, d) or self.W_V.shape != (m, d) or self.W_O.shape != (d, m):
            raise ShapeError("inconsistent attention head shapes")

    @property
    def d(self) -> int:
        return self.W_K.shape[1]


@dataclass(frozen=True)
class FeedForward:
    """Token-wise ReLU layer with ``l`` hidden neurons (``l`` may be zero)."""

    W_1: np.ndarray
    b_1: np.ndarray
    W_2: np.ndarray
    b_2: np.ndarray

    def __post_init__(self):
        for name in ("W_1", "b_1", "W_2", "b_2"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name))))
        l, d = self.W_1.shape
        if self.b_1.shape != (l,) or self.W_2.shape != (d, l) or self.b_2.shape != (d,):
            raise ShapeError("inconsistent feed-forward shapes")

    @property
    def d(self) -> int:
        return self.W_1.shape[1]

    @property
    def width(self) -> int:
        return self.W_1.shape[0]

    @classmethod
    def zero(cls, d: int) -> "FeedForward":
        return cls(np.zeros((0, d)), np.zeros(0), np.zeros((d, 0)), np.zeros(d))


@dataclass(frozen=True)
class BlockSpec:
    """``FF o Attn`` with mandatory residuals.

    An empty ``heads`` tuple makes the attention half the identity; a
    zero-width ``ff`` with ``b_2 = 0`` does the same for the feed-forward half.
    ``tag`` names the role of the block inside a constructed network.
    """

    d: int
    heads: tuple = ()
    ff: FeedForward | None = None
    tag: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.ff is None:
            object.__setattr__(self, "ff", FeedForward.zero(self.d))
        for h in self.heads:
            if h.d != self.d:
                raise ShapeError("head dimension does not match block")
        if self.ff.d != self.d:
            raise ShapeError("feed-forward dimension does not match block")

    @property
    def head_count(self) -> int:
        return len(self.heads)

    @property
    def neuron_count(self) -> int:
        return self.ff.width


def as_seq(X, d: int | None = None, L: int | None = None) -> np.ndarray:
    arr = np.asarray(X)
    if arr.ndim != 2:
        raise ShapeError(f"sequence matrix must be 2-D, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ShapeError(f"expected {d} rows, got {arr.shape[0]}")
    if L is not None and arr.shape[1] != L:
        raise ShapeError(f"expected {L} columns, got {arr.shape[1]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError("empty sequence matrix")
    return arr


def _check_finite(X: np.ndarray) -> None:
    if X.dtype == object:
        if not all(gmpy2.is_finite(v) for v in X.reshape(-1)):
            raise ValueError("non-finite input")
    elif not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")


def softmax_columns(X) -> np.ndarray:
    """Column-wise softmax with per-column max subtraction.

    Works on float arrays and on object arrays of ``mpfr``; the leading axes of
    a batched ``(..., n, L)`` array are treated independently.
    """
    X = np.asarray(X)
    _check_finite(X)
    E = exp_array(X - X.max(axis=-2, keepdims=True))
    return E / E.sum(axis=-2, keepdims=True)


def relu(X) -> np.ndarray:
    return _relu(np.asarray(X))


def attention_forward(heads: Sequence[AttentionHead], X: np.ndarray) -> np.ndarray:
    """Multi-head attention with residual; ``X`` may be ``(d, L)`` or ``(N, d, L)``."""
    out = X
    for h in heads:
        K = h.W_K @ X
        Q = h.W_Q @ X
        S = np.swapaxes(K, -1, -2) @ Q
        P = softmax_columns(S)
        out = out + h.W_O @ ((h.W_V @ X) @ P)
    return out


def ff_forward(ff: FeedForward, X: np.ndarray) -> np.ndarray:
    if ff.width == 0:
        return X + ff.b_2[:, None]
    H = _relu(ff.W_1 @ X + ff.b_1[:, None])
    return X + ff.W_2 @ H + ff.b_2[:, None]


def block_forward(block: BlockSpec, X, precision: Precision = DOUBLE) -> np.ndarray:
    """Evaluate ``FF(Attn(X))`` for one block."""
    X = as_array(X, precision) if precision.is_extended and np.asarray(X).dtype != object else np.asarray(X)
    if X.ndim not in (2, 3) or X.shape[-2] != block.d:
        raise ShapeError(f"block expects {block.d} rows, got shape {X.shape}")
    if X.dtype != object:
        X = X.astype(np.float64, copy=False)
    A = attention_forward(block.heads, X) if block.heads else X
    return ff_forward(block.ff, A)
