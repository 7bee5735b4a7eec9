"""Quantization module: positional encoding followed by ``d L M`` ramp layers.

Layer ``(i, j, k+1)`` adds to row ``i``

    -relu(t) + ((delta+delta*)/delta*) relu(t - delta) - (delta/delta*) relu(t - delta - delta*)

with ``t = X - (j + k(delta + delta*))``. On ``[0, delta]`` this cancels the
offset (the entry snaps to ``j + k(delta+delta*)``); on the gap it interpolates
linearly to the next level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import GridSpec
from .precision import DOUBLE, Precision, as_array, working_context
from .seq import FeedForward, ff_forward

__all__ = ["QuantizeModule", "build_quantizer", "quantize_forward", "ramp", "layer_offsets"]


def ramp(t, delta: float, delta_star: float):
    """The three-ReLU combination, as a function of the shifted input ``t``."""
    t = np.asarray(t, dtype=np.float64)
    step = delta + delta_star
    r = lambda z: np.maximum(z, 0.0)
    return -r(t) + (step / delta_star) * r(t - delta) - (delta / delta_star) * r(t - step)


def layer_offsets(grid: GridSpec, j: int, k: int) -> tuple[float, float, float]:
    c0 = j + k * grid.step
    return c0, c0 + grid.delta, c0 + grid.step


def _layer(grid: GridSpec, i: int, j: int, k: int) -> FeedForward:
    d = grid.d
    e = np.zeros(d)
    e[i - 1] = 1.0
    c0, c1, c2 = layer_offsets(grid, j, k)
    W1 = np.stack([e, e, e])
    b1 = -np.array([c0, c1, c2])
    coef = np.array([-1.0, grid.step / grid.delta_star, -grid.delta / grid.delta_star])
    W2 = e[:, None] * coef[None, :]
    return FeedForward(W1, b1, W2, np.zeros(d))


@dataclass(frozen=True)
class QuantizeModule:
    grid: GridSpec
    layers: tuple  # FeedForward, ordered (1,1,1) ... (d,L,M)
    labels: tuple  # (i, j, k+1) per layer
    merged: bool = False

    @property
    def positional_encoding(self) -> np.ndarray:
        return self.grid.positional_encoding

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def packed(self) -> kernels.PackedStack:
        cache = self.__dict__.get("_packed")
        if cache is None:
            cache = kernels.pack_layers(self.layers, self.grid.d)
            object.__setattr__(self, "_packed", cache)
        return cache

    def as_dict(self) -> dict:
        return {
            "grid": self.grid.as_dict(),
            "merged": self.merged,
            "layers": [
                {"label": list(lab), "W_1": ff.W_1.tolist(), "b_1": ff.b_1.tolist(),
                 "W_2": ff.W_2.tolist(), "b_2": ff.b_2.tolist()}
                for lab, ff in zip(self.labels, self.layers)
            ],
        }


def build_quantizer(grid: GridSpec, merge_width: bool = False) -> QuantizeModule:
    """Construct the ``d L M`` ramp layers (or one merged wide layer)."""
    layers, labels = [], []
    for i in range(1, grid.d + 1):
        for j in range(1, grid.L + 1):
            for k in range(grid.M):
                layers.append(_layer(grid, i, j, k))
                labels.append((i, j, k + 1))
    if merge_width:
        merged = FeedForward(
            np.concatenate([f.W_1 for f in layers]),
            np.concatenate([f.b_1 for f in layers]),
            np.concatenate([f.W_2 for f in layers], axis=1),
            np.zeros(grid.d),
        )
        return QuantizeModule(grid, (merged,), (("merged",),), merged=True)
    return QuantizeModule(grid, tuple(layers), tuple(labels))


def _check_domain(X: np.ndarray) -> None:
    lo = np.min(X)
    hi = np.max(X)
    if lo < 0 or hi > 1:
        raise ValueError("input outside [0, 1]^{d x L}")


def quantize_forward(module: QuantizeModule, X, precision: Precision = DOUBLE,
                     add_encoding: bool = True) -> np.ndarray:
    """``f_T1(X)``: add the positional encoding, then apply every ramp layer.

    ``X`` is ``(d, L)`` or a batch ``(N, d, L)`` with entries in ``[0, 1]``.
    """
    Xf = np.asarray(X, dtype=np.float64) if np.asarray(X).dtype != object else np.asarray(X)
    _check_domain(Xf if Xf.dtype != object else Xf.astype(float))
    single = Xf.ndim == 2
    Xb = Xf[None] if single else Xf
    E = module.positional_encoding
    if precision.is_extended:
        with working_context(precision):
            Z = as_array(Xb, precision)
            if add_encoding:
                Z = Z + as_array(E, precision)[None]
            for ff in module.layers:
                Z = ff_forward(ff, Z)
    else:
        Z = Xb + E[None] if add_encoding else Xb.copy()
        Z = kernels.run_stack(module.packed(), Z)
    return Z[0] if single else Z
