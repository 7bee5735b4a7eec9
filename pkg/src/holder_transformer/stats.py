"""Statistical-error calculators and a plug-in regression demo.

Every ``≲`` bound is evaluated with constant 1, so the numbers are bound
shapes rather than certified inequalities. Logarithms are natural.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import GridSpec, PiecewiseConstantFn, build_grid, embed_output, quantize_target, select_parameters
from .network import TransformerNetwork, build_network, estimate_l2_error
from .reshape import HolderTarget, reshape

__all__ = [
    "RegimeWarning",
    "log_cover",
    "statistical_bound",
    "excess_risk_rate",
    "BoundReport",
    "bound_report",
    "RegressionSetup",
    "RegressionResult",
    "eps_for_sample_size",
    "plugin_regression_demo",
    "regression_sweep",
    "sweep_csv",
]


class RegimeWarning(UserWarning):
    """The covering bound is only meaningful for ``N >= D^4``."""


def _positive(**kw):
    for name, val in kw.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")


def log_cover(mu: float, D: float, N: float, K: float = 1.0) -> float:
    """``D^4 log(e K N D^-4 / mu)``, the log covering-number shape."""
    _positive(mu=mu, D=D, N=N, K=K)
    d4 = float(D) ** 4
    return d4 * math.log(math.e * K * N / (d4 * mu))


def statistical_bound(D: float, K: float, N: float, mu: float) -> float:
    """``(16K + 8)(log N_inf + 1)/N + 3 mu`` with the log cover above.

    Warns with :class:`RegimeWarning` when ``N < D^4``.
    """
    _positive(D=D, K=K, N=N, mu=mu)
    if N < float(D) ** 4:
        warnings.warn("N < D⁴ regime: covering bound is vacuous here", RegimeWarning, stacklevel=2)
    return (16 * K + 8) * (log_cover(mu, D, N, K) + 1) / N + 3 * mu


def excess_risk_rate(alpha: float, d0: int, N: float) -> dict:
    """Rate exponent and the balancing choices of ``D`` and ``mu``.

    ``D = N^{d0/(4 d0 + 2 alpha)}``, ``mu = D^{-2 alpha/d0}`` and the rate value
    ``N^{-a} log N + N^{-a}`` with ``a = alpha/(2 d0 + alpha)``.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if d0 < 1 or N < 2:
        raise ValueError("need d0 >= 1 and N >= 2")
    a = alpha / (2 * d0 + alpha)
    D = N ** (d0 / (4 * d0 + 2 * alpha))
    mu = D ** (-2 * alpha / d0)
    return {"exponent": a, "D": D, "mu": mu, "rate": N ** -a * math.log(N) + N ** -a}


@dataclass
class BoundReport:
    D: float
    K: float
    N: float
    mu: float
    e_sta: float
    log_cover: float
    excess_rate: float
    e_app_sq: float
    tau: float = 0.0
    regime_ok: bool = True
    label: str = "bound shape (constants set to 1)"

    @property
    def decomposition(self) -> tuple[float, float, float]:
        return self.e_sta, self.e_app_sq, self.tau

    @property
    def total(self) -> float:
        return self.e_sta + 2 * self.e_app_sq + 2 * self.tau

    def as_dict(self) -> dict:
        out = asdict(self)
        out["total"] = self.total
        return out


def bound_report(D: float, K: float, N: float, alpha: float, d0: int, e_app_sq: float = 0.0,
                 mu: float | None = None) -> BoundReport:
    mu = D ** (-2 * alpha / d0) if mu is None else mu
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        e_sta = statistical_bound(D, K, N, mu)
    return BoundReport(D, K, N, mu, e_sta, log_cover(mu, D, N, K),
                       excess_risk_rate(alpha, d0, N)["rate"], e_app_sq,
                       regime_ok=N >= float(D) ** 4)


# --- plug-in regression ------------------------------------------------------------


@dataclass
class RegressionSetup:
    target: HolderTarget
    N: int
    noise: float = 0.0
    seed: int = 0
    n_test: int = 20_000

    def __post_init__(self):
        if self.target.d_y != 1:
            raise ValueError("regression targets must be scalar")
        if self.N < 1 or self.noise < 0:
            raise ValueError("need N >= 1 and noise >= 0")

    def draw(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Training and held-out test samples; both derive from ``seed``."""
        rng_tr, rng_te = (np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(2))
        d0 = self.target.d_x
        out = []
        for rng, n in ((rng_tr, self.N), (rng_te, self.n_test)):
            x = rng.random((n, d0))
            y = self.target(x)[:, 0] + self.noise * rng.standard_normal(n)
            out += [x, y]
        return tuple(out)


@dataclass
class RegressionResult:
    N: int
    seed: int
    eps: float
    M: int
    D: int
    excess: float
    excess_cubes: float
    oracle_excess: float
    empty_cells: int
    n_cells: int
    e_app_sq: float
    bound: BoundReport = field(repr=False)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "bound"}
        out["bound"] = self.bound.as_dict()
        return out


def eps_for_sample_size(N: int, alpha: float, K: float, d: int, L: int) -> float:
    """Largest ``eps`` whose grid has at least ``N^{1/(d0 + 2 alpha)}`` cubes per axis.

    This balances cell bias against the variance of the cell means, the
    histogram analogue of the rate choice ``D ≍ N^{d0/(4d0+2alpha)}``.
    """
    d0 = d * L
    m_target = max(2, round(N ** (1.0 / (d0 + 2 * alpha))))

    def grid_m(eps):
        try:
            p = select_parameters(eps, alpha, K, d, L)
            return build_grid(p.delta, p.delta_star, d, L).M
        except ValueError:
            return 0

    lo, hi = 1e-3, 1.0
    while grid_m(hi) >= m_target and hi < 1e3:
        hi *= 2
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        if grid_m(mid) >= m_target:
            lo = mid
        else:
            hi = mid
    return lo


def _cell_means(grid: GridSpec, x: np.ndarray, y: np.ndarray, K: float) -> tuple[np.ndarray, int]:
    idx = grid.locate(reshape(grid.plan, x))
    hit = idx >= 0
    sums = np.bincount(idx[hit], weights=y[hit], minlength=grid.n_points)
    counts = np.bincount(idx[hit], minlength=grid.n_points)
    means = np.zeros(grid.n_points)
    filled = counts > 0
    means[filled] = sums[filled] / counts[filled]
    # the function class is bounded by K, so noisy means are truncated to it
    return np.clip(means, -K, K), int((~filled).sum())


def plugin_regression_demo(setup: RegressionSetup, eps: float, d: int = 1, L: int = 2,
                           oracle: TransformerNetwork | None = None,
                           e_app_samples: int = 20_000) -> RegressionResult:
    """Fit the plug-in estimator and report its excess risk next to the bound shapes.

    The estimator is the approximator built for ``eps`` with the grid values
    replaced by empirical cell means; empty cells fall back to 0 and are
    counted. ``oracle`` (the approximator with exact grid values) may be
    passed in to reuse its contextual layer across seeds.
    """
    f = setup.target
    alpha, K = f.alpha, f.K
    if oracle is None:
        p = select_parameters(eps, alpha, K, d, L)
        grid = build_grid(p.delta, p.delta_star, d, L)
        oracle = build_network(grid, quantize_target(f, grid), 1, K, params=p)
        oracle.report["target"] = {"id": f.catalog_id, "alpha": alpha, "K": K, "d_x": f.d_x, "d_y": 1}
    grid = oracle.grid
    x, y, xt, yt = setup.draw()
    means, empty = _cell_means(grid, x, y, K)
    if empty:
        warnings.warn(f"{empty} of {grid.n_points} cells have no samples; using 0 there", stacklevel=2)
    table = PiecewiseConstantFn(grid, embed_output(grid.plan, means[:, None]), "cell-mean")
    est = oracle.with_table(table)

    pred = est(xt)[:, 0]
    truth = f(xt)[:, 0]
    loss_hat = (pred - yt) ** 2
    loss_star = (truth - yt) ** 2
    excess = float(np.mean(loss_hat - loss_star))
    in_cube = grid.locate(reshape(grid.plan, xt)) >= 0
    excess_cubes = float(np.mean((loss_hat - loss_star)[in_cube])) if in_cube.any() else 0.0
    oracle_excess = float(np.mean((oracle(xt)[:, 0] - yt) ** 2 - loss_star))

    if "e_app_sq" not in oracle.report:
        oracle.report["e_app_sq"] = estimate_l2_error(oracle, f, e_app_samples, seed=0).err_total ** 2
    e_app_sq = oracle.report["e_app_sq"]
    # the covering bound is vacuous at the built depth (N << D^4), so the
    # bound side uses the balancing depth D(N) of the rate
    D_rate = excess_risk_rate(alpha, grid.d0, setup.N)["D"]
    bound = bound_report(D_rate, K, setup.N, alpha, grid.d0, e_app_sq)
    return RegressionResult(setup.N, setup.seed, eps, grid.M, est.D, excess, excess_cubes,
                            oracle_excess, empty, grid.n_points, e_app_sq, bound)


def regression_sweep(target: HolderTarget, Ns=(100, 1000, 10_000), seeds=range(10),
                     noise: float = 0.1, d: int = 1, L: int = 2, n_test: int = 20_000,
                     seed_offset: int = 0) -> dict:
    """Run the demo over ``(N, seed)`` pairs; one oracle network per ``N``."""
    rows = []
    medians = {}
    for N in Ns:
        eps = eps_for_sample_size(N, target.alpha, target.K, d, L)
        p = select_parameters(eps, target.alpha, target.K, d, L)
        grid = build_grid(p.delta, p.delta_star, d, L)
        oracle = build_network(grid, quantize_target(target, grid), 1, target.K, params=p)
        oracle.report["target"] = {"id": target.catalog_id, "alpha": target.alpha, "K": target.K}
        res = []
        for s in seeds:
            setup = RegressionSetup(target, N, noise, seed_offset + s, n_test)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                res.append(plugin_regression_demo(setup, eps, d, L, oracle=oracle))
        rows += res
        medians[N] = float(np.median([r.excess for r in res]))
    ordered = [medians[N] for N in Ns]
    return {
        "rows": rows,
        "medians": medians,
        "monotone": all(a > b for a, b in zip(ordered, ordered[1:])),
    }


def sweep_csv(rows) -> str:
    """``N, empirical_excess, e_app_sq, e_sta_bound`` rows as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "seed", "empirical_excess", "e_app_sq", "e_sta_bound"])
    for r in rows:
        w.writerow([r.N, r.seed, repr(r.excess), repr(r.e_app_sq), repr(r.bound.e_sta)])
    return buf.getvalue()
