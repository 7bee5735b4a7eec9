"""Bump-function family used for the lower bound, and an empirical shattering check."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import PiecewiseConstantFn, build_grid, embed_output
from .network import TransformerNetwork, build_network
from .reshape import HolderTarget, holder_violations, reshape

__all__ = [
    "ShatterFamily",
    "build_shatter_family",
    "lower_bound_M",
    "ShatterReport",
    "verify_shattering",
    "family_holder_violations",
    "default_net_builder",
]


def lower_bound_M(eps: float, alpha: float) -> int:
    """``M = floor((9 eps / 2)^{-1/alpha})`` cubes per axis."""
    if eps <= 0 or not 0 < alpha <= 1:
        raise ValueError("need eps > 0 and alpha in (0, 1]")
    return max(1, math.floor((4.5 * eps) ** (-1.0 / alpha)))


@dataclass(frozen=True)
class ShatterFamily:
    """Cubes ``S_theta`` of side ``l`` tiling ``[0, 1]^d0`` with a pyramid bump on each.

    ``zeta_S(x) = (l/2)^alpha / 2 * max(0, 1 - ||x - c||_inf / (l/2))``: peak at
    the center, zero on the boundary, linear along rays from the center.
    """

    M: int
    d0: int
    alpha: float
    thetas: np.ndarray = field(repr=False)

    @property
    def side(self) -> float:
        return 1.0 / self.M

    @property
    def size(self) -> int:
        return self.M ** self.d0

    @property
    def peak(self) -> float:
        return (self.side / 2) ** self.alpha / 2

    @property
    def centers(self) -> np.ndarray:
        return (self.thetas + 0.5) * self.side

    def zeta(self, x: np.ndarray, theta_index: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        h = self.side / 2
        dist = np.max(np.abs(x - self.centers[theta_index]), axis=1)
        return self.peak * np.maximum(0.0, 1.0 - dist / h)

    def evaluate(self, phi, x) -> np.ndarray:
        """``f_phi(x) = sum_theta phi(theta) zeta_theta(x)`` for a batch ``(N, d0)``."""
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (self.size,):
            raise ValueError(f"phi must have {self.size} entries")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        # supports are disjoint up to boundaries, so only the owning cube matters
        k = np.clip(np.floor(x * self.M), 0, self.M - 1).astype(np.int64)
        idx = (k * self.M ** np.arange(self.d0 - 1, -1, -1)).sum(axis=1)
        dist = np.max(np.abs(x - self.centers[idx]), axis=1)
        return phi[idx] * self.peak * np.maximum(0.0, 1.0 - dist / (self.side / 2))

    def patterns(self):
        for bits in itertools.product((1.0, -1.0), repeat=self.size):
            yield np.array(bits)

    def target(self, phi) -> HolderTarget:
        phi = np.asarray(phi, dtype=np.float64)
        label = "".join("+" if p > 0 else "-" for p in phi)
        return HolderTarget(f"shatter:{label}", self.alpha, 1.0, self.d0, 1,
                            lambda x: self.evaluate(phi, x)[:, None])


def build_shatter_family(M: int, d0: int, alpha: float) -> ShatterFamily:
    if M < 1 or d0 < 1:
        raise ValueError("M and d0 must be positive")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    thetas = np.array(list(itertools.product(range(M), repeat=d0)), dtype=np.float64).reshape(-1, d0)
    return ShatterFamily(M, d0, alpha, thetas)


def family_holder_violations(family: ShatterFamily, n_pairs: int = 100_000, seed: int = 0,
                             patterns=None) -> dict:
    """Sampled Hölder violations (constant 1) per sign pattern."""
    pats = list(family.patterns()) if patterns is None else patterns
    out = {}
    for i, phi in enumerate(pats):
        t = family.target(phi)
        out[t.catalog_id] = holder_violations(t, n_pairs, seed + i, local_scale=family.side / 4)
    return out


@dataclass
class ShatterReport:
    M: int
    d0: int
    n_points: int
    family_ok: bool
    network_ok: bool | None
    patterns: list
    failures: list

    @property
    def shattered(self) -> int:
        return self.n_points if self.family_ok and self.network_ok is not False else 0

    def as_dict(self) -> dict:
        return {"M": self.M, "d0": self.d0, "n_points": self.n_points, "family_ok": self.family_ok,
                "network_ok": self.network_ok, "shattered": self.shattered,
                "patterns": self.patterns, "failures": self.failures}


def default_net_builder(family: ShatterFamily, d: int = 1, seed: int = 0,
                        inner: float = 0.8, gap: float = 0.19) -> Callable:
    """Return ``phi -> g_phi``; one shared quantizer and contextual layer.

    The quantization grid has cubes of width ``inner/M`` and gaps of width
    ``gap/M``; each family center lies inside the matching cube while
    ``M <= 30``. Grid values are ``f_phi`` at the family centers.
    """
    if family.d0 % d:
        raise ValueError("d must divide d0")
    L = family.d0 // d
    grid = build_grid(inner / family.M, gap / family.M, d, L)
    if grid.M != family.M:
        raise ValueError("quantization grid does not match the family")
    if not (grid.locate(reshape(grid.plan, family.centers)) == np.arange(family.size)).all():
        raise ValueError("family centers fall outside the quantization cubes")
    base: TransformerNetwork | None = None

    def table_for(phi):
        vals = family.evaluate(phi, family.centers)
        return PiecewiseConstantFn(grid, embed_output(grid.plan, vals[:, None]), "family-center")

    def build(phi):
        nonlocal base
        if base is None:
            base = build_network(grid, table_for(phi), 1, 1.0, seed)
            return base
        return base.with_table(table_for(phi))

    return build


def verify_shattering(family: ShatterFamily, net_builder: Callable | None = None,
                      d: int = 1, max_points: int = 4, check_network: bool = True) -> ShatterReport:
    """Check sign realization by ``f_phi`` and by the constructed ``g_phi`` at centers."""
    if family.size > max_points:
        raise ValueError(f"{family.size} points exceed max_points={max_points}")
    builder = None
    if check_network:
        builder = net_builder or default_net_builder(family, d)
    rows, failures = [], []
    fam_ok, net_ok = True, True
    for phi in family.patterns():
        label = "".join("+" if p > 0 else "-" for p in phi)
        fvals = family.evaluate(phi, family.centers)
        f_match = np.sign(fvals) == phi
        row = {"phi": label, "f_ok": bool(f_match.all())}
        for t in np.flatnonzero(~f_match):
            failures.append({"phi": label, "theta": family.thetas[t].astype(int).tolist(), "stage": "family"})
        fam_ok &= row["f_ok"]
        if builder is not None:
            g = builder(phi)
            gvals = np.asarray(g(family.centers))[:, 0]
            g_match = np.sign(gvals) == phi
            row["g_ok"] = bool(g_match.all())
            row["max_abs_diff"] = float(np.max(np.abs(gvals - fvals)))
            for t in np.flatnonzero(~g_match):
                failures.append({"phi": label, "theta": family.thetas[t].astype(int).tolist(),
                                 "stage": "network"})
            net_ok &= row["g_ok"]
        rows.append(row)
    return ShatterReport(family.M, family.d0, family.size, bool(fam_ok),
                         bool(net_ok) if builder is not None else None, rows, failures)
