"""Reshape/flatten layers and a catalog of Hölder targets.

The reshape is column-major: entry ``k`` (1-based) of a ``d0``-vector lands at
row ``((k-1) mod d) + 1`` and column ``floor((k-1)/d) + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .seq import ShapeError

__all__ = [
    "ReshapePlan",
    "reshape",
    "flatten",
    "HolderTarget",
    "holder_catalog",
    "get_target",
    "holder_violations",
]


@dataclass(frozen=True)
class ReshapePlan:
    d: int
    L: int

    def __post_init__(self):
        if self.d < 1 or self.L < 1:
            raise ValueError("d and L must be positive")

    @property
    def d0(self) -> int:
        return self.d * self.L

    def index(self, k: int) -> tuple[int, int]:
        """1-based ``(i, j)`` for 1-based ``k``."""
        if not 1 <= k <= self.d0:
            raise IndexError(k)
        return (k - 1) % self.d + 1, (k - 1) // self.d + 1


def reshape(plan: ReshapePlan, x) -> np.ndarray:
    """Vector (``d0``) or batch (``N x d0``) to sequence matrix form."""
    x = np.asarray(x)
    if x.shape[-1] != plan.d0:
        raise ShapeError(f"expected length {plan.d0}, got {x.shape[-1]}")
    lead = x.shape[:-1]
    # column-major: consecutive blocks of d entries form the columns
    return np.swapaxes(x.reshape(*lead, plan.L, plan.d), -1, -2).copy()


def flatten(plan: ReshapePlan, X) -> np.ndarray:
    X = np.asarray(X)
    if X.shape[-2:] != (plan.d, plan.L):
        raise ShapeError(f"expected trailing shape {(plan.d, plan.L)}, got {X.shape[-2:]}")
    lead = X.shape[:-2]
    return np.swapaxes(X, -1, -2).reshape(*lead, plan.d0).copy()


@dataclass(frozen=True)
class HolderTarget:
    """A concrete member of the Hölder class with known ``(alpha, K)``.

    ``fn`` maps a batch ``(N, d_x)`` to ``(N, d_y)``.
    """

    catalog_id: str
    alpha: float
    K: float
    d_x: int
    d_y: int
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = self.fn(np.atleast_2d(x))
        return out[0] if single else out

    @property
    def smoothness_constant(self) -> float:
        return math.sqrt(self.d_y) * self.K


def _constant(c: float, alpha: float, K: float, d_x: int, d_y: int) -> HolderTarget:
    if abs(c) > K:
        raise ValueError("constant must satisfy |c| <= K")
    return HolderTarget(f"constant:{c:g}", alpha, K, d_x, d_y,
                        lambda x: np.full((x.shape[0], d_y), float(c)))


def _bump(alpha: float, K: float, d_x: int) -> HolderTarget:
    # |x_1 - 1/2|^alpha is alpha-Hölder with constant 1 and bounded by 2^-alpha
    return HolderTarget("bump", alpha, K, d_x, 1,
                        lambda x: K * np.abs(x[:, :1] - 0.5) ** alpha)


def _coord_bump(alpha: float, K: float, d_x: int) -> HolderTarget:
    return HolderTarget("coord_bump", alpha, K, d_x, d_x,
                        lambda x: K * np.abs(x - 0.5) ** alpha)


def _product(alpha: float, K: float, d_x: int) -> HolderTarget:
    # Product of bumps. A telescoping bound gives a Hölder constant of
    # 2^{-alpha(n-1)} n^{1-alpha/2}; the prefactor cancels it.
    n = d_x
    scale = K * 2.0 ** (alpha * (n - 1)) * n ** (alpha / 2.0 - 1.0)
    return HolderTarget("product", alpha, K, d_x, 1,
                        lambda x: scale * np.prod(np.abs(x - 0.5) ** alpha, axis=1, keepdims=True))


def holder_catalog(alpha: float = 0.5, K: float = 1.0, d_x: int = 2) -> list[HolderTarget]:
    """Concrete targets used by tests and the CLI."""
    return [
        _constant(0.0, alpha, K, d_x, 1),
        _constant(0.5 * K, alpha, K, d_x, d_x),
        _bump(alpha, K, d_x),
        _coord_bump(alpha, K, d_x),
        _product(alpha, K, d_x),
    ]


def get_target(catalog_id: str, alpha: float = 0.5, K: float = 1.0, d_x: int = 2,
               d_y: int | None = None) -> HolderTarget:
    """Look up a catalog target; ``d_y`` applies to constants (default ``d_x``)."""
    if catalog_id.startswith("constant"):
        _, _, val = catalog_id.partition(":")
        c = float(val) if val else 0.0
        return _constant(c, alpha, K, d_x, d_x if d_y is None else d_y)
    table = {"bump": _bump, "coord_bump": _coord_bump, "product": _product}
    if catalog_id not in table:
        raise KeyError(f"unknown target {catalog_id!r}; choose from constant[:c], {', '.join(table)}")
    return table[catalog_id](alpha, K, d_x)


def holder_violations(target: HolderTarget, n_pairs: int = 100_000, seed: int = 0,
                      local_scale: float | None = 0.05) -> int:
    """Count sampled pairs violating ``||f(x)-f(y)|| <= sqrt(d_y) K ||x-y||^alpha``.

    Half of the pairs are uniform; the other half are close pairs (offsets of
    size about ``local_scale``) where the inequality is tightest.
    """
    rng = np.random.default_rng(seed)
    n_far = n_pairs if local_scale is None else n_pairs // 2
    x = rng.random((n_pairs, target.d_x))
    y = rng.random((n_pairs, target.d_x))
    if local_scale is not None:
        near = x[n_far:] + local_scale * rng.uniform(-1, 1, size=(n_pairs - n_far, target.d_x))
        y[n_far:] = np.clip(near, 0.0, 1.0)
    lhs = np.linalg.norm(target(x) - target(y), axis=1)
    rhs = target.smoothness_constant * np.linalg.norm(x - y, axis=1) ** target.alpha
    return int(np.sum(lhs > rhs * (1 + 1e-12) + 1e-15))
