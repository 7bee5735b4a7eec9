"""Command-line front end.

Every command writes ``<command>.json`` (schema 1, with the resolved config)
into the output directory, plus CSV curves where relevant. Exit codes: 0 when
all checks pass, 2 when a named check fails, 1 on usage errors.

Randomness: the user seed feeds ``numpy.random.SeedSequence``; the network
build uses the seed directly, sampling stages use children spawned from it.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__, kernels
from .counting import count_closed_form, count_instrumented, vc_sweep, vc_upper_bound
from .grid import build_grid, quantize_target, select_parameters
from .network import build_approximator, build_network, estimate_l2_error, rate_sweep, widen
from .precision import extended
from .reshape import get_target
from .shatter import build_shatter_family, family_holder_violations, verify_shattering
from .stats import regression_sweep, sweep_csv
from .verify import check_network, check_value

SCHEMA = 1
OUT_ENV = "HOLDER_TF_OUT"


class CheckFailure(Exception):
    def __init__(self, names):
        super().__init__(", ".join(names))
        self.names = names


def emit_curves(rows) -> str:
    """CSV text with columns ``x, y, ci_lo, ci_hi``; missing intervals repeat ``y``."""
    rows = list(rows)
    if len(rows) < 2:
        raise ValueError("a curve needs at least two points")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "ci_lo", "ci_hi"])
    for r in rows:
        x, y = float(r[0]), float(r[1])
        lo = float(r[2]) if len(r) > 2 and r[2] is not None else y
        hi = float(r[3]) if len(r) > 3 and r[3] is not None else y
        w.writerow([repr(x), repr(y), repr(lo), repr(hi)])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


class Ctx:
    def __init__(self, command: str, config: dict, out: str | None):
        self.command = command
        self.config = config
        self.out = Path(out or os.environ.get(OUT_ENV) or "holder_tf_out")
        self.checks: dict[str, bool] = {}
        self.t0 = time.perf_counter()

    def check(self, name: str, ok) -> None:
        self.checks[name] = bool(ok)

    def write_csv(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text)
        return path

    def finish(self, results: dict) -> None:
        failed = [k for k, v in self.checks.items() if not v]
        report = {
            "schema": SCHEMA, "version": __version__, "command": self.command,
            "config": self.config, "backend": kernels.BACKEND, "checks": self.checks,
            "failed": failed, "ok": not failed,
            "seconds": time.perf_counter() - self.t0, "results": results,
        }
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / f"{self.command}.json"
        path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
        for name, ok in self.checks.items():
            click.echo(f"{'PASS' if ok else 'FAIL'} {name}")
        click.echo(f"report: {path}")
        if failed:
            raise CheckFailure(failed)


def _grid_args(eps, delta, delta_star):
    if (eps is None) == (delta is None or delta_star is None):
        raise click.UsageError("give exactly one of --eps or (--delta and --delta-star)")
    if eps is None and (delta is None) != (delta_star is None):
        raise click.UsageError("--delta and --delta-star go together")


def _need_seed(seed):
    if seed is None:
        raise click.UsageError("--seed is required for this command")


def _precision(bits):
    return extended(bits) if bits else None


def common(f):
    opts = [
        click.option("--alpha", type=float, default=0.5, show_default=True),
        click.option("--K", "K", type=float, default=1.0, show_default=True),
        click.option("--d", type=int, default=1, show_default=True),
        click.option("--L", "L", type=int, default=2, show_default=True),
        click.option("--eps", type=float, default=None),
        click.option("--delta", type=float, default=None),
        click.option("--delta-star", type=float, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--samples", type=int, default=None),
        click.option("--precision-bits", type=int, default=None,
                     help="extended working precision for the contextual layer"),
        click.option("--out", type=click.Path(file_okay=False), default=None,
                     help=f"output directory (default ${OUT_ENV} or ./holder_tf_out)"),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _config(command, **kw):
    return {"command": command, **kw}


def _target(name, alpha, K, d, L):
    try:
        return get_target(name, alpha, K, d * L)
    except (KeyError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc


@click.group()
@click.version_option(__version__)
def cli():
    """Build, verify and account for explicit Transformer approximators."""


@cli.command()
@common
@click.option("--target", default="bump", show_default=True)
@click.option("--scale", type=click.Choice(["tempered", "paper"]), default="tempered", show_default=True)
def build(alpha, K, d, L, eps, delta, delta_star, seed, samples, precision_bits, out, target, scale):
    """Build an approximator and check it reproduces the grid table."""
    _grid_args(eps, delta, delta_star)
    _need_seed(seed)
    cfg = _config("build", alpha=alpha, K=K, d=d, L=L, eps=eps, delta=delta, delta_star=delta_star,
                  seed=seed, precision_bits=precision_bits, target=target, scale=scale)
    ctx = Ctx("build", cfg, out)
    f = _target(target, alpha, K, d, L)
    net = build_approximator(f, eps, alpha, K, d, L, seed, delta, delta_star, scale,
                             _precision(precision_bits))
    v = check_value(net)
    ctx.check("grid_table", v["ok"])
    ctx.finish({"summary": net.summary(), "value": v, "report": net.report})


@cli.command()
@common
@click.option("--target", default="bump", show_default=True)
@click.option("--scale", type=click.Choice(["tempered", "paper"]), default="tempered", show_default=True)
def verify(alpha, K, d, L, eps, delta, delta_star, seed, samples, precision_bits, out, target, scale):
    """Quantization, contextual and value-mapping invariants."""
    _grid_args(eps, delta, delta_star)
    _need_seed(seed)
    n = samples or 1000
    cfg = _config("verify", alpha=alpha, K=K, d=d, L=L, eps=eps, delta=delta, delta_star=delta_star,
                  seed=seed, samples=n, precision_bits=precision_bits, target=target, scale=scale)
    ctx = Ctx("verify", cfg, out)
    f = _target(target, alpha, K, d, L)
    net = build_approximator(f, eps, alpha, K, d, L, seed, delta, delta_star, scale,
                             _precision(precision_bits))
    res = check_network(net, n_per_cube=n, seed=seed)
    for name, r in res.items():
        ctx.check(name, r["ok"])
    ctx.finish({"summary": net.summary(), "checks": res})


@cli.command("approx-error")
@common
@click.option("--target", default="bump", show_default=True)
def approx_error(alpha, K, d, L, eps, delta, delta_star, seed, samples, precision_bits, out, target):
    """Monte Carlo L2 error of the approximator against its target."""
    _grid_args(eps, delta, delta_star)
    _need_seed(seed)
    n = samples or 200_000
    cfg = _config("approx-error", alpha=alpha, K=K, d=d, L=L, eps=eps, delta=delta,
                  delta_star=delta_star, seed=seed, samples=n, target=target)
    ctx = Ctx("approx-error", cfg, out)
    f = _target(target, alpha, K, d, L)
    net = build_approximator(f, eps, alpha, K, d, L, seed, delta, delta_star)
    est = estimate_l2_error(net, f, n, seed=seed)
    if eps is not None:
        ctx.check("l2_below_eps", est.ci_total[1] < eps)
    ctx.check("cube_error_bound", est.err_cubes <= est.cell_bound + 3 * est.ci_width_cubes)
    ctx.finish({"summary": net.summary(), "error": est.as_dict()})


@cli.command()
@common
@click.option("--M", "M", type=int, default=None, help="cubes per axis (closed form only)")
@click.option("--instrumented/--closed-form-only", default=False)
def count(alpha, K, d, L, eps, delta, delta_star, seed, samples, precision_bits, out, M, instrumented):
    """Operation and parameter counts; optionally cross-checked by the interpreter."""
    if M is None:
        _grid_args(eps, delta, delta_star)
        if eps is not None:
            p = select_parameters(eps, alpha, K, d, L)
            delta, delta_star = p.delta, p.delta_star
        M = build_grid(delta, delta_star, d, L).M
    cfg = _config("count", alpha=alpha, K=K, d=d, L=L, M=M, eps=eps, delta=delta,
                  delta_star=delta_star, seed=seed, instrumented=instrumented)
    ctx = Ctx("count", cfg, out)
    closed = count_closed_form(d, L, M)
    res = {"closed_form": closed.as_dict(), "vc_upper_bound": vc_upper_bound(closed.t, closed.omega)}
    if instrumented:
        _need_seed(seed)
        step = 1.0 / M
        grid = build_grid(0.8 * step, 0.19 * step, d, L)
        f = _target("bump", alpha, K, d, L)
        net = build_network(grid, quantize_target(f, grid), 1, K, seed, cleanup="ungated")
        inst = count_instrumented(net, seed=seed)
        res["instrumented"] = inst.as_dict()
        ctx.check("t_matches", inst.t == closed.t)
        ctx.check("omega_matches", inst.omega == closed.omega)
    ctx.finish(res)


@cli.command("vc-bound")
@common
@click.option("--t", "t", type=float, default=None)
@click.option("--omega", type=float, default=None)
@click.option("--Ms", "Ms", default="20,50,100,200,500,1000", show_default=True,
              help="comma-separated cubes-per-axis sweep")
def vc_bound(alpha, K, d, L, eps, delta, delta_star, seed, samples, precision_bits, out, t, omega, Ms):
    """VC upper bound for given counts, and its D-scaling along a sweep."""
    try:
        Ms_list = [int(m) for m in Ms.split(",") if m.strip()]
    except ValueError as exc:
        raise click.UsageError(f"bad --Ms: {exc}") from exc
    cfg = _config("vc-bound", d=d, L=L, t=t, omega=omega, Ms=Ms_list)
    ctx = Ctx("vc-bound", cfg, out)
    res = {}
    if t is not None or omega is not None:
        if t is None or omega is None:
            raise click.UsageError("--t and --omega go together")
        res["vc_upper_bound"] = vc_upper_bound(t, omega)
    sw = vc_sweep(Ms_list, d, L)
    res["sweep"] = sw
    ctx.check("slope_near_4", abs(sw["slope"] - 4) <= 0.3)
    ctx.write_csv("vc_sweep.csv", emit_curves((math.log(r["D"]), math.log(r["vc"])) for r in sw["rows"]))
    ctx.finish(res)


@cli.command()
@common
@click.option("--M", "M", type=int, default=2, show_default=True)
@click.option("--pairs", type=int, default=100_000, show_default=True)
def shatter(alpha, K, d, L, eps, delta, delta_star, seed, samples, precision_bits, out, M, pairs):
    """Sign realization of the bump family by f_phi and by constructed networks."""
    _need_seed(seed)
    cfg = _config("shatter", alpha=alpha, d=d, L=L, M=M, seed=seed, pairs=pairs)
    ctx = Ctx("shatter", cfg, out)
    fam = build_shatter_family(M, d * L, alpha)
    rep = verify_shattering(fam, d=d)
    viol = family_holder_violations(fam, pairs, seed)
    ctx.check("family_signs", rep.family_ok)
    ctx.check("network_signs", rep.network_ok)
    ctx.check("holder", sum(viol.values()) == 0)
    ctx.finish({"shattering": rep.as_dict(), "holder_violations": viol})


@cli.command()
@common
@click.option("--target", default="coord_bump", show_default=True)
@click.option("--n", "ns", default="1,2,4", show_default=True, help="channel counts")
@click.option("--eps-list", default="0.7,0.5,0.35,0.25", show_default=True)
def tradeoff(alpha, K, d, L, eps, delta, delta_star, seed, samples, precision_bits, out, target, ns, eps_list):
    """Depth-width trade-off of a built network and the depth-vs-eps rate curve."""
    _grid_args(eps, delta, delta_star)
    _need_seed(seed)
    try:
        n_list = [int(v) for v in ns.split(",")]
        e_list = [float(v) for v in eps_list.split(",")]
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    n_in = samples or 100
    cfg = _config("tradeoff", alpha=alpha, K=K, d=d, L=L, eps=eps, delta=delta, delta_star=delta_star,
                  seed=seed, samples=n_in, target=target, n=n_list, eps_list=e_list)
    ctx = Ctx("tradeoff", cfg, out)
    f = _target(target, alpha, K, d, L)
    net = build_approximator(f, eps, alpha, K, d, L, seed, delta, delta_star)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    X, _ = net.grid.sample_cubes(n_in, rng)
    ref = net.forward(X)
    rows = []
    for n in n_list:
        w = widen(net, n)
        diff = float(np.abs(w.forward(X) - ref).max())
        rows.append({**w.summary(), "max_diff": diff})
        ctx.check(f"agree_n{n}", diff <= 1e-9)
    rate = rate_sweep(e_list, alpha, K, d, L)
    ctx.check("rate_slope", abs(rate["slope"] - rate["expected"]) <= 0.15 * rate["expected"])
    ctx.write_csv("depth_width.csv", emit_curves((r["D_wide"], r["W_wide"]) for r in rows))
    ctx.write_csv("rate.csv", emit_curves((math.log(1 / r["eps"]), math.log(r["D"])) for r in rate["rows"]))
    ctx.finish({"widen": rows, "rate": rate})


@cli.command()
@common
@click.option("--target", default="bump", show_default=True)
@click.option("--noise", type=float, default=0.1, show_default=True)
@click.option("--Ns", "Ns", default="100,1000,10000", show_default=True)
@click.option("--repeats", type=int, default=10, show_default=True)
def regression(alpha, K, d, L, eps, delta, delta_star, seed, samples, precision_bits, out, target,
               noise, Ns, repeats):
    """Plug-in regression sweep over sample sizes."""
    _need_seed(seed)
    try:
        N_list = [int(v) for v in Ns.split(",")]
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    n_test = samples or 20_000
    cfg = _config("regression", alpha=alpha, K=K, d=d, L=L, seed=seed, target=target, noise=noise,
                  Ns=N_list, repeats=repeats, samples=n_test)
    ctx = Ctx("regression", cfg, out)
    f = _target(target, alpha, K, d, L)
    if f.d_y != 1:
        raise click.UsageError("regression needs a scalar target")
    sw = regression_sweep(f, N_list, range(repeats), noise, d, L, n_test, seed_offset=seed)
    ctx.check("monotone_median", sw["monotone"])
    ctx.check("below_bound", all(r.excess <= r.bound.e_sta + 2 * r.e_app_sq for r in sw["rows"]))
    ctx.write_csv("regression.csv", sweep_csv(sw["rows"]))
    ctx.finish({"medians": sw["medians"], "rows": [r.as_dict() for r in sw["rows"]]})


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="holder-tf", standalone_mode=False)
    except CheckFailure as exc:
        click.echo(f"failed checks: {exc}", err=True)
        return 2
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ValueError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


def run() -> None:
    """Console-script entry point."""
    sys.exit(main())
