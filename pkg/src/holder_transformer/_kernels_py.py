"""Pure numpy reference kernels (used when the compiled core is unavailable)."""

import numpy as np

BACKEND = "python"


def ff_stack_columns(cols, widths, w1, b1, w2, b2):
    """Push token columns through a stack of residual ReLU layers, in place.

    ``cols`` is ``(n, d)``; layer ``k`` has ``widths[k]`` neurons with
    ``W_1`` (``l x d``, row-major) and ``W_2`` (``d x l``, row-major) stored
    back to back in ``w1``/``w2``, biases in ``b1`` and ``b2`` (``n_layers x d``).
    """
    # Sums run left to right per entry, as in the compiled kernel; a BLAS
    # matmul reorders them, and the value stack amplifies that rounding.
    n, d = cols.shape
    x = [cols[:, j].copy() for j in range(d)]
    ow = 0
    ob = 0
    for k in range(widths.shape[0]):
        l = int(widths[k])
        h = []
        for a in range(l):
            acc = np.full(n, b1[ob + a])
            for j in range(d):
                acc += w1[ow + a * d + j] * x[j]
            h.append(np.maximum(acc, 0.0, out=acc))
        for j in range(d):
            acc = np.zeros(n)
            for a in range(l):
                acc += w2[ow + j * l + a] * h[a]
            x[j] += acc
            x[j] += b2[k * d + j]
        ow += l * d
        ob += l
    for j in range(d):
        cols[:, j] = x[j]
    return cols


def attention_batch(X, W_K, W_Q, W_V, W_O):
    """Single-head attention with residual on a batch ``(N, d, L)``."""
    K = W_K @ X
    Q = W_Q @ X
    S = np.swapaxes(K, -1, -2) @ Q
    S -= S.max(axis=-2, keepdims=True)
    np.exp(S, out=S)
    S /= S.sum(axis=-2, keepdims=True)
    return X + W_O @ ((W_V @ X) @ S)
