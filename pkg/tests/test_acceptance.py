"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import time
import warnings

import numpy as np
import pytest

from holder_transformer.counting import count_closed_form, count_instrumented, vc_sweep
from holder_transformer.grid import build_grid, quantize_target
from holder_transformer.network import (build_approximator, build_network, estimate_l2_error,
                                        rate_sweep, widen)
from holder_transformer.quantize import build_quantizer
from holder_transformer.reshape import get_target
from holder_transformer.shatter import (build_shatter_family, family_holder_violations,
                                        verify_shattering)
from holder_transformer.stats import (RegressionSetup, excess_risk_rate, plugin_regression_demo,
                                      regression_sweep, statistical_bound)
from holder_transformer.verify import check_context, check_quantization, check_value

RESULTS: dict[int, tuple[bool, str]] = {}


def _record(n: int, ok: bool, detail: str) -> bool:
    RESULTS[n] = (bool(ok), detail)
    return bool(ok)


def _net(d, L, delta, delta_star, target="bump", **kw):
    return build_approximator(get_target(target, 0.5, 1.0, d * L), d=d, L=L, delta=delta,
                              delta_star=delta_star, **kw)


def criterion_1():
    t0 = time.perf_counter()
    worst, gaps, ok = 0.0, [], True
    for d in (1, 2):
        q = build_quantizer(build_grid(0.4, 0.1, d, 2))
        r = check_quantization(q, n_per_cube=1000, seed=1, tol=1e-10)
        worst = max(worst, r["max_cube_error"])
        gaps.append(r["gap_range"])
        ok &= r["ok"]
    dt = time.perf_counter() - t0
    return ok and dt < 5, f"max cube error {worst:.1e}, gap ranges {gaps}, {dt:.1f}s"


def criterion_2():
    t0 = time.perf_counter()
    paper = _net(1, 2, 0.4, 0.1, scale="paper")
    rp = check_context(paper)
    rt = [check_context(_net(d, 2, 0.4, 0.1)) for d in (1, 2)]
    dt = time.perf_counter() - t0
    ok = rp["ok"] and all(r["ok"] for r in rt) and dt < 30
    return ok, (f"extended: {rp['n_ids']} ids, log gamma_emp {rp['log_gamma_emp']:.1f}, "
                f"log-theory rel diff {rp['log_rel_diff']:.1e}; tempered gamma "
                f"{[round(r['gamma_emp'], 6) for r in rt]}; {dt:.1f}s")


def criterion_3():
    t0 = time.perf_counter()
    errs = []
    for d, L, delta, ds, scale in [(1, 2, 0.4, 0.1, "tempered"), (1, 2, 0.4, 0.1, "paper"),
                                   (2, 2, 0.4, 0.1, "tempered"), (1, 3, 0.4, 0.1, "tempered")]:
        net = _net(d, L, delta, ds, "coord_bump", scale=scale)
        assert 2 * L * net.grid.n_points + 1 <= 70
        errs.append(check_value(net, tol=1e-8)["max_error"])
    dt = time.perf_counter() - t0
    return max(errs) <= 1e-8 and dt < 60, f"max errors {[f'{e:.1e}' for e in errs]}, {dt:.1f}s"


def criterion_4(n_samples=100_000):
    t0 = time.perf_counter()
    ok, parts = True, []
    for eps in (0.7, 0.5):
        for name in ("bump", "coord_bump"):
            f = get_target(name, 0.5, 1.0, 2)
            net = build_approximator(f, eps=eps, d=1, L=2)
            est = estimate_l2_error(net, f, n_samples, seed=7)
            c_ok = est.err_cubes <= est.cell_bound + 3 * est.ci_width_cubes
            t_ok = est.ci_total[1] < eps
            ok &= c_ok and t_ok
            parts.append(f"{name}@{eps}: {est.err_total:.3f} (hi {est.ci_total[1]:.3f})")
    dt = time.perf_counter() - t0
    return ok and dt < 600, "; ".join(parts) + f"; {dt:.0f}s"


def criterion_5():
    r = rate_sweep((0.7, 0.5, 0.35, 0.25), alpha=0.5, K=1.0, d=1, L=2)
    rel = abs(r["slope"] - r["expected"]) / r["expected"]
    return rel <= 0.15, f"slope {r['slope']:.3f} vs {r['expected']:.1f} ({100 * rel:.1f}%)"


def criterion_6():
    t0 = time.perf_counter()
    net = _net(1, 2, 0.2, 0.05, "coord_bump")
    X, _ = net.grid.sample_cubes(100, np.random.default_rng(3))
    ref = net.forward(X)
    diffs = {n: float(np.abs(widen(net, n).forward(X) - ref).max()) for n in (1, 2, 4)}
    dt = time.perf_counter() - t0
    return max(diffs.values()) <= 1e-9 and dt < 60, f"max diffs {diffs}, {dt:.1f}s"


def criterion_7():
    configs = [(1, 2, 2), (2, 2, 2), (1, 2, 3), (2, 2, 3), (1, 3, 3)]
    mism = []
    for d, L, M in configs:
        step = 1.0 / M
        grid = build_grid(0.8 * step, 0.19 * step, d, L)
        net = build_network(grid, quantize_target(get_target("bump", 0.5, 1.0, d * L), grid), 1,
                            cleanup="ungated")
        inst, closed = count_instrumented(net), count_closed_form(d, L, M)
        if (inst.t, inst.omega) != (closed.t, closed.omega):
            mism.append(((d, L, M), inst.t, closed.t, inst.omega, closed.omega))
    c = count_closed_form(2, 2, 2)
    spots = (c.per_part["context"]["params"], c.per_part["context"]["ops"], c.omega)
    ok = not mism and spots == (16, 86, 156)
    return ok, f"mismatches {mism}; context params/ops, omega at (2,2,2) = {spots}"


def criterion_8():
    Ms = [r["M"] for r in rate_sweep((0.7, 0.5, 0.35, 0.25, 0.175), 0.5, 1.0, 1, 2)["rows"]]
    s = vc_sweep(Ms, d=1, L=2)["slope"]
    return abs(s - 4) <= 0.3, f"M sweep {Ms}, slope {s:.3f}"


def criterion_9():
    t0 = time.perf_counter()
    rep = verify_shattering(build_shatter_family(2, 2, 0.5), d=1)
    dt = time.perf_counter() - t0
    ok = rep.family_ok and rep.network_ok and len(rep.patterns) == 16 and dt < 300
    return ok, f"{len(rep.patterns)} patterns, family {rep.family_ok}, networks {rep.network_ok}, {dt:.1f}s"


def criterion_10():
    v = family_holder_violations(build_shatter_family(2, 2, 0.5), n_pairs=100_000, seed=11)
    return sum(v.values()) == 0, f"{sum(v.values())} violations over {len(v)} patterns x 1e5 pairs"


def criterion_11():
    # hand evaluation, written out independently of the library
    hand = 24 * (16 * math.log(math.e * 1000 / (16 * 0.01)) + 1) / 1000 + 0.03
    got = statistical_bound(2, 1, 1000, 0.01)
    rel13 = abs(got - hand) / hand
    N, alpha, d0 = 5000, 0.5, 2
    a = alpha / (2 * d0 + alpha)
    r = excess_risk_rate(alpha, d0, N)
    hand14 = N ** (-a) * math.log(N) + N ** (-a)
    rel14 = abs(r["rate"] - hand14) / hand14
    exp_ok = excess_risk_rate(1.0, 4, 100)["exponent"] == 1 / 9 and r["exponent"] == 0.5 / 4.5
    ok = rel13 <= 1e-9 and rel14 <= 1e-9 and exp_ok and abs(got - 3.7943) < 1e-3
    return ok, f"E_sta(1,2,1000,0.01) = {got:.6f} (rel {rel13:.1e}); rate rel {rel14:.1e}; exponent exact {exp_ok}"


def criterion_12():
    c = get_target("constant:0.5", 0.5, 1.0, 2, d_y=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        const = plugin_regression_demo(RegressionSetup(c, 10_000, 0.0, 0), 0.7)
    const_ok = (const.empty_cells == 0 and abs(const.excess_cubes) <= 1e-12
                and abs(const.excess - const.oracle_excess) <= 1e-12)
    sw = regression_sweep(get_target("bump", 0.5, 1.0, 2), (100, 1000, 10_000), range(10), noise=0.1)
    med = {k: round(v, 4) for k, v in sw["medians"].items()}
    bound_ok = all(r.excess <= r.bound.e_sta + 2 * r.e_app_sq for r in sw["rows"])
    ok = const_ok and sw["monotone"] and bound_ok
    return ok, (f"constant: cube excess {const.excess_cubes:.1e}, full {const.excess:.4f} = oracle "
                f"{const.oracle_excess:.4f}; medians {med}; below bound shape {bound_ok}")


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 13)}


def run_criterion(n: int) -> tuple[bool, str]:
    try:
        ok, detail = CRITERIA[n]()
    except Exception as exc:
        ok, detail = False, f"error: {exc!r}"
    _record(n, ok, detail)
    return ok, detail


def line(n: int) -> str:
    ok, detail = RESULTS[n]
    return f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"


@pytest.mark.parametrize("n", [1, 2, 3, 5, 6, 7, 8, 9, 10, 11])
def test_criterion(n):
    ok, detail = run_criterion(n)
    assert ok, detail


@pytest.mark.slow
@pytest.mark.parametrize("n", [4, 12])
def test_criterion_slow(n):
    ok, detail = run_criterion(n)
    assert ok, detail


if __name__ == "__main__":
    for n in CRITERIA:
        run_criterion(n)
        print(line(n), flush=True)
