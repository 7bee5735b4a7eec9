"""Value mapping: one pair of feed-forward layers per (grid point, column) anchor.

Subunit ``(i, k)`` labels every entry within ``gamma1/(2 sqrt d)`` of the anchor
ID with ``sqrt(d) r`` (``sigma_zeta1``), fires a column gate when all ``d``
entries carry the label (``sigma_zeta2``), writes the target column there and
removes stray labels elsewhere (``sigma_zeta3``).

The anchored column is parked at ``Y - (r+K) 1`` by default
(``anchor_sign=-1``). Parking at ``Y + (r+K) 1`` (``anchor_sign=+1``) is also
available. In that form later subunits can still see the parked column: its
entries reach ``sqrt(d) r`` whenever ``d = 1``, so ``sigma_zeta3`` subtracts the
label again. The negative shift keeps every later gadget argument below its
support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from . import kernels
from .context import SeparationCert
from .grid import PiecewiseConstantFn
from .precision import DOUBLE, Precision, as_array, extended, mp_log, to_float, working_context
from .seq import FeedForward, ff_forward

__all__ = [
    "sigma_zeta1",
    "sigma_zeta2",
    "sigma_zeta3",
    "ValueMapParams",
    "ValueModule",
    "build_value_mapper",
    "value_forward",
    "paper_log_gammas",
    "value_bits",
]


CLEANUPS = ("gated", "ungated", "masked")


def _r(z):
    return np.maximum(z, 0.0)


def sigma_zeta1(t, gamma1: float, gamma2: float, d: int, r: float):
    """Plateau of height ``sqrt(d) r`` on ``|t| <= gamma1/(2 sqrt d)``."""
    t = np.asarray(t, dtype=np.float64)
    s = 2 * math.sqrt(d)
    a, b = gamma1 / s, (gamma1 + gamma2) / s
    return (2 * d * r / gamma2) * (_r(t + b) - _r(t + a) - _r(t - a) + _r(t - b))


def sigma_zeta2(t, gamma2: float):
    t = np.asarray(t, dtype=np.float64)
    return (_r(t) - _r(t - gamma2)) / gamma2


def sigma_zeta3(t, gamma2: float, d: int, r: float):
    t = np.asarray(t, dtype=np.float64)
    return (math.sqrt(d) * r / gamma2) * (_r(t + gamma2) - _r(t))


@dataclass
class ValueMapParams:
    gamma1: object
    gamma2: object
    label: object  # sqrt(d) r
    shift: object  # r + K
    r: object
    K: float
    d: int
    L: int
    n_anchors: int
    anchor_sign: int = -1
    cleanup: str = "gated"
    band_adjusted: bool = False
    log_gamma1_paper: float = float("nan")
    log_gamma2_paper: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "gamma1": float(self.gamma1), "gamma2": float(self.gamma2),
            "label": float(self.label), "shift": float(self.shift), "r": float(self.r),
            "K": self.K, "n_anchors": self.n_anchors, "anchor_sign": self.anchor_sign,
            "cleanup": self.cleanup, "band_adjusted": self.band_adjusted,
            "log_gamma1_paper": self.log_gamma1_paper, "log_gamma2_paper": self.log_gamma2_paper,
        }


@dataclass(frozen=True)
class ValueModule:
    params: ValueMapParams
    layers: tuple  # FF^(i,k,1), FF^(i,k,2), ..., FF^(extra)
    labels: tuple
    anchors: np.ndarray = field(repr=False)  # (n_anchors, d) contextual IDs
    targets: np.ndarray = field(repr=False)  # (n_anchors, d) target columns
    precision: Precision = DOUBLE

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def packed(self) -> kernels.PackedStack:
        cache = self.__dict__.get("_packed")
        if cache is None:
            cache = kernels.pack_layers(self.layers, self.params.d)
            object.__setattr__(self, "_packed", cache)
        return cache


def value_bits(gamma, floor: int = 64, guard: int = 320) -> int:
    """Mantissa width for exact labels.

    The plateau test resolves ``gamma/(4 sqrt d)`` after a cancellation
    amplified by ``2 d r / gamma2``, so the unit roundoff must sit well below
    ``gamma^2``.
    """
    return max(int(floor), int(math.ceil(-2 * mp_log(gamma) / math.log(2))) + guard)


def paper_log_gammas(grid, K: float = 1.0) -> tuple[float, float]:
    """Log of the printed ``gamma1`` (``delta^2`` numerator) and ``gamma2`` (``delta*^2``)."""
    d, L, M = grid.d, grid.L, grid.M
    lnL = math.log(L)
    V1 = float((L * M ** grid.d0 + 1) ** 4)
    base = 2 * math.log(lnL) - math.log(4 * math.sqrt(d) * (2 * lnL + 3) * (L + 1) ** 2 * V1)
    expo = -V1 * 2 * d * (2 * lnL + 3) * (L + 1) ** 2 / grid.step
    return 2 * math.log(grid.delta) + base + expo, 2 * math.log(grid.delta_star) + base + expo


def _band_conflicts(coord: np.ndarray, lo, hi) -> int:
    """Pairs whose coordinate difference lies strictly inside ``(lo, hi)``."""
    if coord.dtype == object:
        s = sorted(coord)
        n = 0
        for i, a in enumerate(s):
            for b in s[i + 1:]:
                diff = b - a
                if diff >= hi:
                    break
                if diff > lo:
                    n += 1
        return n
    s = np.sort(coord)
    upper = np.searchsorted(s, s + hi, side="left")
    lower = np.searchsorted(s, s + lo, side="right")
    return int(np.maximum(upper - lower, 0).sum())


def _small_diffs(coord: np.ndarray, cap) -> list:
    s = sorted(coord) if coord.dtype == object else np.sort(coord)
    out = []
    for i in range(len(s)):
        j = i + 1
        while j < len(s) and s[j] - s[i] < cap:
            if s[j] - s[i] > 0:
                out.append(s[j] - s[i])
            j += 1
    return sorted(out)


def _choose_band(ids: np.ndarray, gamma, d: int, sqrt_d):
    """Pick ``(gamma1, gamma2)`` with ``gamma1 + gamma2 < gamma`` and no ramp-band hits.

    Default is ``(gamma/2, gamma/4)``. A coordinate difference inside the
    ``sigma_zeta1`` ramp would leave a partial label that ``sigma_zeta3`` cannot
    remove; in that case the band moves into the widest empty gap.
    """
    g1, g2 = gamma / 2, gamma / 4
    s = 2 * sqrt_d
    if d == 1:
        return g1, g2, False
    hits = sum(_band_conflicts(ids[:, j], g1 / s, (g1 + g2) / s) for j in range(d))
    if hits == 0:
        return g1, g2, False
    cap = gamma / s
    diffs = sorted(set().union(*[set(_small_diffs(ids[:, j], cap)) for j in range(d)]))
    edges = [0 * cap] + [x for x in diffs if x < cap] + [cap * (1 - 1e-9)]
    best = max(range(len(edges) - 1), key=lambda i: edges[i + 1] - edges[i])
    a, b = edges[best], edges[best + 1]
    if a <= 0:
        a = (b - a) / 4
    if not b > a:
        raise ValueError("insufficient separation budget")
    return a * s, (b - a) * s, True


def build_value_mapper(ids: np.ndarray, targets: PiecewiseConstantFn, cert: SeparationCert,
                       K: float = 1.0, anchor_sign: int = -1, cleanup: str = "gated",
                       precision: Precision | None = None) -> ValueModule:
    """Construct ``2 L M^d0`` subunit layers and the cleanup layer.

    ``ids`` is the ``(M^d0, d, L)`` array of contextual IDs for every positional
    grid point (``cert.ids``); ``targets.table`` holds ``Y_G`` in the same order.
    ``cleanup`` selects the final layer:

    * ``'ungated'``: a bias shift of ``(r+K)`` on every column;
    * ``'gated'``: the shift only on columns whose entry sum is ``<= -d r``
      (anchored columns); other columns pass through;
    * ``'masked'``: as ``'gated'`` and additionally zeroes the non-negative
      entries of unanchored columns, so gap inputs map to 0.

    The gated forms require ``anchor_sign=-1``.
    """
    if anchor_sign not in (-1, 1):
        raise ValueError("anchor_sign must be +1 or -1")
    if cleanup not in CLEANUPS:
        raise ValueError(f"cleanup must be one of {CLEANUPS}")
    if cleanup != "ungated" and anchor_sign == 1:
        raise ValueError("gated cleanup requires anchor_sign=-1")
    gamma = cert.gamma_emp
    if gamma is None or not gamma > 0:
        raise ValueError("gamma_emp must be positive")
    n_pts, d, L = targets.table.shape
    if ids.shape != (n_pts, d, L):
        raise ValueError("contextual ID table does not cover the grid")
    if precision is None:
        precision = extended(value_bits(gamma, ids.flat[0].precision)) if ids.dtype == object else DOUBLE
    with working_context(precision):
        one = as_array(1.0, precision)[()]
        sqrt_d = gmpy2.sqrt(gmpy2.mpfr(d)) if precision.is_extended else math.sqrt(d)
        ids_x = as_array(ids, precision) if ids.dtype != object else ids
        anchors = np.swapaxes(ids_x, 1, 2).reshape(-1, d)
        tcols = np.swapaxes(as_array(targets.table, precision), 1, 2).reshape(-1, d)
        gamma = gamma * one
        g1, g2, adjusted = _choose_band(anchors, gamma, d, sqrt_d)
        if not (g1 > 0 and g2 > 0 and g1 + g2 < gamma):
            raise ValueError("insufficient separation budget")
        grid = targets.grid
        step = (gmpy2.mpfr(grid.delta) + gmpy2.mpfr(grid.delta_star)) if precision.is_extended else grid.step
        r = (sqrt_d * (L + 1) + sqrt_d * step / 4) * one
        label = sqrt_d * r
        shift = r + K
        a = g1 / (2 * sqrt_d)
        b = (g1 + g2) / (2 * sqrt_d)
        c1 = 2 * d * r / g2
        eye = as_array(np.eye(d), precision)
        ones = as_array(np.ones(d), precision)
        zeros = as_array(np.zeros(d), precision)
        c1_pattern = as_array(np.array([1.0, -1.0, -1.0, 1.0]), precision) * c1
        offsets = np.array([b, a, -a, -b], dtype=object if precision.is_extended else np.float64)
        layers, labels = [], []
        for idx in range(anchors.shape[0]):
            anc = anchors[idx]
            # FF^(i,k,1): 4 neurons per coordinate
            W1 = np.repeat(eye, 4, axis=0)
            b1 = (np.repeat(-anc, 4) + np.tile(offsets, d))
            W2 = np.zeros((d, 4 * d), dtype=W1.dtype)
            for j in range(d):
                W2[j, 4 * j:4 * j + 4] = c1_pattern
            layers.append(FeedForward(W1, b1, W2, zeros))
            # FF^(i,k,2): column gate (2 neurons) and label removal (2 per coordinate)
            w = tcols[idx] + anchor_sign * shift * ones - anc
            gate_rows = np.stack([ones, ones])
            gate_b = np.array([-d * sqrt_d * r, -d * sqrt_d * r - g2], dtype=W1.dtype)
            rem_rows = np.repeat(eye, 2, axis=0)
            rem_b = np.tile(np.array([-label + g2, -label], dtype=W1.dtype), d)
            W1b = np.concatenate([gate_rows, rem_rows])
            b1b = np.concatenate([gate_b, rem_b])
            W2b = np.zeros((d, 2 + 2 * d), dtype=W1.dtype)
            W2b[:, 0] = w / g2
            W2b[:, 1] = -w / g2
            for j in range(d):
                W2b[j, 2 + 2 * j] = -label / g2
                W2b[j, 3 + 2 * j] = label / g2
            layers.append(FeedForward(W1b, b1b, W2b, zeros))
            i, k = divmod(idx, L)
            labels.append((i + 1, k + 1, 1))
            labels.append((i + 1, k + 1, 2))
        if cleanup != "ungated":
            W1e = np.stack([-ones, -ones])
            b1e = np.array([0 * one, -d * r], dtype=W1.dtype)
            coef = shift / (d * r)
            W2e = np.stack([ones * coef, -ones * coef], axis=1)
            if cleanup == "masked":
                W1e = np.concatenate([W1e, eye])
                b1e = np.concatenate([b1e, zeros])
                W2e = np.concatenate([W2e, -eye], axis=1)
            extra = FeedForward(W1e, b1e, W2e, zeros)
        else:
            extra = FeedForward(np.zeros((0, d), dtype=W1.dtype), np.zeros(0, dtype=W1.dtype),
                                np.zeros((d, 0), dtype=W1.dtype), -anchor_sign * shift * ones)
        layers.append(extra)
        labels.append(("extra",))
    lg1, lg2 = paper_log_gammas(targets.grid, K)
    params = ValueMapParams(g1, g2, label, shift, r, K, d, L, anchors.shape[0], anchor_sign,
                            cleanup, adjusted, lg1, lg2)
    return ValueModule(params, tuple(layers), tuple(labels), anchors, tcols, precision)


def value_forward(module: ValueModule, Xbar, precision: Precision | None = None) -> np.ndarray:
    """Apply every subunit and the cleanup layer to ``(d, L)`` or ``(N, d, L)``."""
    precision = precision or module.precision
    X = np.asarray(Xbar)
    single = X.ndim == 2
    Xb = X[None] if single else X
    if precision.is_extended:
        with working_context(precision):
            Z = as_array(Xb, precision) if Xb.dtype != object else Xb
            for ff in module.layers:
                Z = ff_forward(ff, Z)
    else:
        Z = kernels.run_stack(module.packed(), to_float(Xb) if Xb.dtype == object else Xb.astype(np.float64))
    return Z[0] if single else Z
