"""Quantization grid, cubes, piecewise-constant targets and (delta, delta*) selection."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .reshape import HolderTarget, ReshapePlan, flatten, reshape

__all__ = [
    "ParamSelection",
    "select_parameters",
    "GridSpec",
    "build_grid",
    "PiecewiseConstantFn",
    "quantize_target",
    "cell_error_bound",
    "piecewise_error_bound",
]


@dataclass(frozen=True)
class ParamSelection:
    epsilon: float
    alpha: float
    K: float
    d0: int
    delta_max: float
    c1: float
    c2: float
    c3: float
    delta_star_max_c2: float
    delta_star_max_c3: float
    delta: float
    delta_star: float
    factor: float

    @property
    def delta_star_max(self) -> float:
        """Binding cap: the smaller of the two admissible caps that is positive."""
        caps = [c for c in (self.delta_star_max_c2, self.delta_star_max_c3) if c > 0]
        return min(caps) if caps else 0.0

    @property
    def binding_cap(self) -> str:
        if self.delta_star_max_c3 > 0 and self.delta_star_max_c3 <= self.delta_star_max_c2:
            return "c3"
        return "c2"

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["delta_star_max"] = self.delta_star_max
        out["binding_cap"] = self.binding_cap
        return out


def select_parameters(eps: float, alpha: float, K: float, d: int, L: int,
                      factor: float = 0.9) -> ParamSelection:
    """Pick ``delta`` and ``delta*`` so the piecewise-constant error is below ``eps``.

    ``delta`` is ``factor`` times its cap. ``delta*`` is ``factor`` times the
    smaller positive cap among ``(c2 - delta) delta / 2`` and
    ``(c3 - delta) delta / 2``. The c3 cap can be negative when ``c3 <= delta``;
    it is then reported but cannot bind.
    """
    d0 = d * L
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if d0 <= 2 * alpha:
        raise ValueError("requires d0 > 2α")
    if not 0 < factor < 1:
        raise ValueError("factor must lie in (0, 1)")
    delta_max = eps ** (1 / alpha) * d0 ** (-(alpha + 1) / (2 * alpha)) * (2 * K) ** (-1 / alpha)
    c1 = math.sqrt(d0) * K
    c2 = (eps / (2 * math.sqrt(d0) * K)) ** (2 / d0)
    c3 = (eps / (4 * math.sqrt(d0) * (4 * d0 + K))) ** (2 / d0)
    delta = factor * delta_max
    cap2 = (c2 - delta) * delta / 2
    cap3 = (c3 - delta) * delta / 2
    positive = [c for c in (cap2, cap3) if c > 0]
    if not positive:
        raise ValueError("no positive delta* cap; eps too large for this configuration")
    delta_star = factor * min(positive)
    return ParamSelection(eps, alpha, K, d0, delta_max, c1, c2, c3, cap2, cap3,
                          delta, delta_star, factor)


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``M`` cubes per coordinate with gaps of width ``delta*``."""

    delta: float
    delta_star: float
    d: int
    L: int
    M: int = field(init=False)

    def __post_init__(self):
        if not (0 < self.delta < 1 and 0 < self.delta_star < 1):
            raise ValueError("delta and delta* must lie in (0, 1)")
        if self.delta + self.delta_star >= 1:
            raise ValueError("delta + delta* must be below 1")
        M = math.floor(1.0 / (self.delta + self.delta_star))
        if M < 1:
            raise ValueError("grid has no cells")
        object.__setattr__(self, "M", M)

    @property
    def step(self) -> float:
        return self.delta + self.delta_star

    @property
    def d0(self) -> int:
        return self.d * self.L

    @property
    def plan(self) -> ReshapePlan:
        return ReshapePlan(self.d, self.L)

    @property
    def n_points(self) -> int:
        return self.M ** self.d0

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.M) * self.step

    @property
    def positional_encoding(self) -> np.ndarray:
        return np.ones((self.d, 1)) * np.arange(1, self.L + 1)[None, :]

    # --- enumeration -------------------------------------------------------
    def level_indices(self) -> np.ndarray:
        """All level-index matrices, lexicographic in the flattened coordinate order.

        Row ``n`` holds the ``d0`` level indices of grid point ``n`` in reshape
        order (coordinate ``k`` maps to matrix cell ``(i(k), j(k))``).
        """
        return np.array(list(itertools.product(range(self.M), repeat=self.d0)), dtype=np.int64).reshape(-1, self.d0)

    def points(self) -> np.ndarray:
        """Grid matrices ``G`` of shape ``(M^d0, d, L)``."""
        return reshape(self.plan, self.level_indices() * self.step)

    def positional_points(self) -> np.ndarray:
        return self.points() + self.positional_encoding[None]

    def point_index(self, levels) -> int:
        """Lexicographic index of a level-index vector (reshape order)."""
        idx = 0
        for v in np.asarray(levels).reshape(-1):
            idx = idx * self.M + int(v)
        return idx

    # --- membership ----------------------------------------------------------
    def locate(self, X) -> np.ndarray:
        """Cube index for each input, or -1 if it lies in a gap.

        ``X`` is ``(d, L)`` or ``(N, d, L)``; cubes are closed intervals.
        """
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        Xb = X[None] if single else X
        x = flatten(self.plan, Xb)
        k = np.floor(x / self.step)
        k = np.clip(k, 0, self.M - 1)
        # the upper boundary point of the previous cube equals k*step + delta
        offset = x - k * self.step
        inside = (offset >= -1e-15) & (offset <= self.delta + 1e-15) & (x >= 0) & (x <= 1)
        ok = inside.all(axis=1)
        weights = self.M ** np.arange(self.d0 - 1, -1, -1)
        idx = (k.astype(np.int64) * weights).sum(axis=1)
        out = np.where(ok, idx, -1)
        return out[0] if single else out

    def contains(self, X, index: int) -> bool:
        return int(self.locate(X)) == index

    # --- sampling --------------------------------------------------------------
    def sample_cubes(self, n: int, rng: np.random.Generator, cube: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Uniform samples in the union of cubes (or in one cube)."""
        if cube is None:
            cubes = rng.integers(0, self.n_points, size=n)
        else:
            cubes = np.full(n, cube, dtype=np.int64)
        levels = np.stack([(cubes // self.M ** p) % self.M for p in range(self.d0 - 1, -1, -1)], axis=1)
        x = levels * self.step + rng.random((n, self.d0)) * self.delta
        return reshape(self.plan, x), cubes

    def sample_gaps(self, n: int, rng: np.random.Generator, max_rounds: int = 10_000) -> np.ndarray:
        """Uniform samples in the complement of the cubes, by rejection."""
        out = []
        have = 0
        for _ in range(max_rounds):
            x = rng.random((max(4 * n, 1024), self.d0))
            X = reshape(self.plan, x)
            keep = X[self.locate(X) < 0]
            out.append(keep)
            have += keep.shape[0]
            if have >= n:
                break
        if have < n:
            raise RuntimeError("gap region too small for rejection sampling")
        return np.concatenate(out)[:n]

    # --- measures ----------------------------------------------------------------
    @property
    def cube_measure(self) -> float:
        return (self.M * self.delta) ** self.d0

    @property
    def complement_measure(self) -> float:
        """Exact Lebesgue measure of the gap region, ``1 - (M delta)^d0``."""
        return 1.0 - self.cube_measure

    @property
    def complement_measure_paper(self) -> float:
        """The expression ``(1 - M delta)^d0`` used by the original error analysis."""
        return (1.0 - self.M * self.delta) ** self.d0

    def separation_margin(self) -> float:
        """Smallest distance between projections of distinct cubes (per coordinate)."""
        if self.M == 1:
            return math.inf
        return self.step - self.delta

    def as_dict(self) -> dict:
        return {"delta": self.delta, "delta_star": self.delta_star, "d": self.d, "L": self.L,
                "M": self.M, "n_points": self.n_points}


def build_grid(delta: float, delta_star: float, d: int, L: int) -> GridSpec:
    return GridSpec(delta, delta_star, d, L)


@dataclass(frozen=True)
class PiecewiseConstantFn:
    """``f_delta(X) = Y_G`` on each cube ``S_G`` and 0 off the cubes."""

    grid: GridSpec
    table: np.ndarray  # (M^d0, d, L)
    anchor: str = "corner"

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        Xb = X[None] if single else X
        idx = self.grid.locate(Xb)
        out = np.zeros_like(Xb)
        hit = idx >= 0
        out[hit] = self.table[idx[hit]]
        return out[0] if single else out

    def as_dict(self) -> dict:
        return {"grid": self.grid.as_dict(), "anchor": self.anchor, "table": self.table.tolist()}


def embed_output(plan: ReshapePlan, y: np.ndarray) -> np.ndarray:
    """Place target values into ``d x L`` matrices.

    ``d_y == d0`` uses the reshape; ``d_y == 1`` writes into entry (1, 1) and
    zeros elsewhere, which pairs with the output projection ``e_1``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] == plan.d0:
        return reshape(plan, y)
    if y.shape[-1] == 1:
        out = np.zeros(y.shape[:-1] + (plan.d, plan.L))
        out[..., 0, 0] = y[..., 0]
        return out
    raise ValueError(f"cannot embed output of width {y.shape[-1]} into d0={plan.d0}")


def project_output(plan: ReshapePlan, Y: np.ndarray, d_y: int) -> np.ndarray:
    if d_y == plan.d0:
        return flatten(plan, Y)
    if d_y == 1:
        return np.asarray(Y)[..., 0, 0:1]
    raise ValueError("unsupported output width")


def quantize_target(target: HolderTarget, grid: GridSpec, anchor: str = "corner") -> PiecewiseConstantFn:
    """Tabulate ``Y_G = f(G)`` at grid corners (or cube centers with ``anchor='center'``)."""
    if target.d_x != grid.d0:
        raise ValueError("target input dimension does not match grid")
    x = grid.level_indices() * grid.step
    if anchor == "center":
        x = x + grid.delta / 2
    elif anchor != "corner":
        raise ValueError("anchor must be 'corner' or 'center'")
    table = embed_output(grid.plan, target(x))
    return PiecewiseConstantFn(grid, table, anchor)


def cell_error_bound(alpha: float, K: float, d0: int, delta: float) -> float:
    """Per-cube bound ``sqrt(d0) K (sqrt(d0) delta)^alpha``."""
    return math.sqrt(d0) * K * (math.sqrt(d0) * delta) ** alpha


def piecewise_error_bound(alpha: float, K: float, grid: GridSpec) -> float:
    """Right-hand side ``c1 (sqrt(d0) delta)^alpha + (1 - M delta)^{d0/2} sqrt(d0) K``."""
    d0 = grid.d0
    return cell_error_bound(alpha, K, d0, grid.delta) + (1 - grid.M * grid.delta) ** (d0 / 2) * math.sqrt(d0) * K
