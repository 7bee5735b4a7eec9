"""Kernel dispatch: compiled core when importable, numpy fallback otherwise.

Set ``HOLDER_TRANSFORMER_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

if os.environ.get("HOLDER_TRANSFORMER_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND

__all__ = ["BACKEND", "PackedStack", "pack_layers", "run_stack", "attention_batch", "python_backend"]


@dataclass(frozen=True)
class PackedStack:
    """Flat storage for a run of feed-forward layers sharing dimension ``d``."""

    d: int
    widths: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def n_layers(self) -> int:
        return int(self.widths.shape[0])


def pack_layers(layers, d: int) -> PackedStack:
    widths = np.array([ff.width for ff in layers], dtype=np.int64)
    w1 = [np.asarray(ff.W_1, dtype=np.float64).reshape(-1) for ff in layers]
    w2 = [np.asarray(ff.W_2, dtype=np.float64).reshape(-1) for ff in layers]
    b1 = [np.asarray(ff.b_1, dtype=np.float64) for ff in layers]
    b2 = [np.asarray(ff.b_2, dtype=np.float64) for ff in layers]
    cat = lambda xs: np.ascontiguousarray(np.concatenate(xs)) if xs else np.zeros(0)
    return PackedStack(d, widths, cat(w1), cat(b1), cat(w2), cat(b2))


def run_stack(stack: PackedStack, X: np.ndarray, impl=None) -> np.ndarray:
    """Apply a packed stack token-wise to ``X`` of shape ``(N, d, L)``."""
    impl = impl or _impl
    N, d, L = X.shape
    # always a fresh buffer: for d == 1 the reshape is a view of X
    cols = np.array(np.swapaxes(X, 1, 2).reshape(N * L, d), dtype=np.float64, order="C", copy=True)
    if stack.n_layers:
        impl.ff_stack_columns(cols, stack.widths, stack.w1, stack.b1, stack.w2, stack.b2)
    return np.swapaxes(cols.reshape(N, L, d), 1, 2).copy()


def attention_batch(X, W_K, W_Q, W_V, W_O, impl=None):
    impl = impl or _impl
    return impl.attention_batch(np.ascontiguousarray(X, dtype=np.float64), W_K, W_Q, W_V, W_O)


def python_backend():
    return _kernels_py
