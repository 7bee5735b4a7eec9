"""End-to-end approximator: quantizer, contextual attention, value mapping.

The canonical network has one block per feed-forward layer plus the attention
block, so ``D = d0 M + 2 L M^d0 + 2``. ``forward`` runs the three modules on
their fast paths; ``forward_blocks`` interprets the block list literally.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .context import (ContextWeights, SeparationCert, build_context_layer, contextual_forward,
                      verify_contextual_ids)
from .grid import (GridSpec, ParamSelection, PiecewiseConstantFn, build_grid, cell_error_bound,
                   embed_output, project_output, quantize_target, select_parameters)
from .precision import DOUBLE, Precision, as_array, extended, to_float, working_context
from .quantize import QuantizeModule, build_quantizer, quantize_forward
from .reshape import HolderTarget, ReshapePlan, flatten, reshape
from .seq import BlockSpec, FeedForward, block_forward
from .value import ValueModule, build_value_mapper, value_forward

__all__ = [
    "BuildError",
    "TransformerNetwork",
    "build_network",
    "build_approximator",
    "ErrorEstimate",
    "estimate_l2_error",
    "WideNetwork",
    "widen",
    "block_count",
    "rate_sweep",
]


class BuildError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def block_count(d: int, L: int, M: int) -> int:
    return d * L * M + 2 * L * M ** (d * L) + 2


@dataclass
class TransformerNetwork:
    grid: GridSpec
    quantizer: QuantizeModule
    context: ContextWeights
    cert: SeparationCert
    value: ValueModule
    table: PiecewiseConstantFn
    d_y: int
    params: ParamSelection | None = None
    report: dict = field(default_factory=dict)

    @property
    def plan(self) -> ReshapePlan:
        return self.grid.plan

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def L(self) -> int:
        return self.grid.L

    @property
    def precision(self) -> Precision:
        return self.context.precision

    @property
    def positional_encoding(self) -> np.ndarray:
        return self.grid.positional_encoding

    @property
    def blocks(self) -> tuple:
        cache = self.__dict__.get("_blocks")
        if cache is None:
            d = self.d
            out = [BlockSpec(d, (), ff, "quantize", {"label": lab})
                   for ff, lab in zip(self.quantizer.layers, self.quantizer.labels)]
            out.append(BlockSpec(d, (self.context.head(),), None, "context"))
            out.extend(BlockSpec(d, (), ff, "extra" if lab == ("extra",) else "value", {"label": lab})
                       for ff, lab in zip(self.value.layers, self.value.labels))
            cache = tuple(out)
            self.__dict__["_blocks"] = cache
        return cache

    @property
    def D(self) -> int:
        return self.quantizer.n_layers + 1 + self.value.n_layers

    @property
    def width(self) -> int:
        return max(ff.width for ff in (*self.quantizer.layers, *self.value.layers))

    def forward(self, X) -> np.ndarray:
        """Sequence-level output for ``(d, L)`` or ``(N, d, L)`` inputs in ``[0, 1]``."""
        Z = quantize_forward(self.quantizer, X, self.precision)
        Z = contextual_forward(self.context, Z, self.precision)
        return value_forward(self.value, Z)

    def forward_blocks(self, X) -> np.ndarray:
        """Literal block-by-block evaluation (slow reference)."""
        X = np.asarray(X, dtype=np.float64)
        prec = self.precision
        Z = X + self.positional_encoding
        if prec.is_extended:
            Z = as_array(Z, prec)
        for blk in self.blocks:
            p = self.value.precision if blk.tag in ("value", "extra") else prec
            with working_context(p):
                Z = block_forward(blk, Z, p)
        return Z

    def __call__(self, x) -> np.ndarray:
        """Vector form: ``(N, d0)`` inputs to ``(N, d_y)`` float outputs."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        Y = to_float(self.forward(reshape(self.plan, xb)))
        out = project_output(self.plan, Y, self.d_y)
        return out[0] if single else out

    def with_table(self, table: PiecewiseConstantFn, d_y: int | None = None) -> "TransformerNetwork":
        """Same quantizer and contextual layer, value mapping rebuilt for ``table``."""
        if table.grid != self.grid:
            raise ValueError("table grid differs from the network grid")
        vp = self.value.params
        value = build_value_mapper(self.cert.ids, table, self.cert, vp.K, vp.anchor_sign, vp.cleanup)
        return TransformerNetwork(self.grid, self.quantizer, self.context, self.cert, value, table,
                                  self.d_y if d_y is None else d_y, self.params, dict(self.report))

    def summary(self) -> dict:
        return {
            "D": self.D, "width": self.width, "M": self.grid.M, "d": self.d, "L": self.L,
            "delta": self.grid.delta, "delta_star": self.grid.delta_star,
            "n_points": self.grid.n_points, "precision": self.precision.mode,
            "precision_bits": self.precision.bits, "value_bits": self.value.precision.bits,
            "gamma_emp": float(self.cert.gamma_emp), "log_gamma_emp": self.cert.log_gamma_emp,
            "d_y": self.d_y, "backend": kernels.BACKEND,
        }


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except BuildError:
        raise
    except Exception as exc:  # noqa: BLE001 - stage name is the useful part
        raise BuildError(name, exc) from exc


def build_network(grid: GridSpec, table: PiecewiseConstantFn, d_y: int, K: float = 1.0,
                  seed: int = 0, scale: str | float = "tempered",
                  precision: Precision | None = None, anchor_sign: int = -1,
                  cleanup: str = "masked", params: ParamSelection | None = None) -> TransformerNetwork:
    """Assemble the network for an explicit grid and value table."""
    times = {}
    t0 = time.perf_counter()
    quant = _stage("quantize", build_quantizer, grid)
    times["quantize"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    weights, cert = _stage("context", build_context_layer, grid, seed, precision, scale)
    cert = _stage("context-verify", verify_contextual_ids, weights, grid, cert)
    times["context"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    value = _stage("value", build_value_mapper, cert.ids, table, cert, K, anchor_sign, cleanup)
    times["value"] = time.perf_counter() - t0
    net = TransformerNetwork(grid, quant, weights, cert, value, table, d_y, params)
    net.report = {"summary": net.summary(), "cert": cert.as_dict(), "value": value.params.as_dict(),
                  "build_seconds": times,
                  "params": params.as_dict() if params is not None else None}
    return net


def build_approximator(target: HolderTarget, eps: float | None = None, alpha: float | None = None,
                       K: float | None = None, d: int = 1, L: int = 2, seed: int = 0,
                       delta: float | None = None, delta_star: float | None = None,
                       scale: str | float = "tempered", precision: Precision | None = None,
                       anchor: str = "corner", anchor_sign: int = -1,
                       cleanup: str = "masked") -> TransformerNetwork:
    """Build ``g`` with ``||f - g||_2 < eps`` from a Hölder target.

    Either ``eps`` (grid chosen by ``select_parameters``) or an explicit
    ``(delta, delta_star)`` pair must be given.
    """
    alpha = target.alpha if alpha is None else alpha
    K = target.K if K is None else K
    if (eps is None) == (delta is None or delta_star is None):
        raise ValueError("give exactly one of eps or (delta, delta_star)")
    if L < 2:
        raise ValueError("L must be at least 2")
    if target.d_x != d * L:
        raise ValueError("target input dimension must equal d*L")
    params = None
    if eps is not None:
        params = _stage("select", select_parameters, eps, alpha, K, d, L)
        delta, delta_star = params.delta, params.delta_star
    grid = _stage("grid", build_grid, delta, delta_star, d, L)
    table = _stage("table", quantize_target, target, grid, anchor)
    net = build_network(grid, table, target.d_y, K, seed, scale, precision, anchor_sign, cleanup, params)
    net.report["target"] = {"id": target.catalog_id, "alpha": alpha, "K": K,
                            "d_x": target.d_x, "d_y": target.d_y, "anchor": anchor}
    return net


# --- error estimation ------------------------------------------------------------


@dataclass
class ErrorEstimate:
    err_cubes: float  # RMS over the cube union (conditional)
    ci_cubes: tuple
    err_gaps: float  # RMS over the complement (conditional)
    err_total: float  # L2 norm over [0, 1]^d0
    ci_total: tuple
    cube_measure: float
    n_cubes: int
    n_gaps: int
    cell_bound: float

    @property
    def ci_width_cubes(self) -> float:
        return (self.ci_cubes[1] - self.ci_cubes[0]) / 2

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _sq_err(net, ref, x: np.ndarray, batch: int) -> np.ndarray:
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], batch):
        xs = x[s:s + batch]
        diff = np.asarray(ref(xs), dtype=np.float64) - net(xs)
        out[s:s + batch] = np.sum(diff ** 2, axis=1)
    return out


def _sqrt_ci(mean: float, se: float, z: float = 1.96) -> tuple:
    lo = max(mean - z * se, 0.0)
    return math.sqrt(lo), math.sqrt(mean + z * se)


def estimate_l2_error(net: TransformerNetwork, target, n_samples: int = 200_000, seed: int = 0,
                      batch: int = 50_000, gap_fraction: float = 0.5) -> ErrorEstimate:
    """Stratified Monte Carlo estimate of ``||f - g||_2`` over ``[0, 1]^d0``.

    Cubes and gaps are sampled separately (seeds derived from ``seed``) and
    recombined with their exact Lebesgue weights. Intervals are 95% normal
    intervals on the squared error, mapped through the square root.
    """
    grid = net.grid
    ss = np.random.SeedSequence(seed)
    rng_c, rng_g = (np.random.default_rng(s) for s in ss.spawn(2))
    m_c = grid.cube_measure
    m_g = 1.0 - m_c
    n_g = int(round(n_samples * gap_fraction)) if m_g > 0 else 0
    n_c = n_samples - n_g
    Xc, _ = grid.sample_cubes(n_c, rng_c)
    ec = _sq_err(net, target, flatten(net.plan, Xc), batch)
    mc, vc = float(ec.mean()), float(ec.var(ddof=1)) if n_c > 1 else 0.0
    if n_g:
        Xg = grid.sample_gaps(n_g, rng_g)
        eg = _sq_err(net, target, flatten(net.plan, Xg), batch)
        mg, vg = float(eg.mean()), float(eg.var(ddof=1))
    else:
        mg, vg = 0.0, 0.0
    total = m_c * mc + m_g * mg
    se_total = math.sqrt(m_c ** 2 * vc / max(n_c, 1) + (m_g ** 2 * vg / n_g if n_g else 0.0))
    alpha = net.report.get("target", {}).get("alpha", getattr(target, "alpha", 1.0))
    K = net.report.get("target", {}).get("K", getattr(target, "K", 1.0))
    return ErrorEstimate(
        err_cubes=math.sqrt(mc), ci_cubes=_sqrt_ci(mc, math.sqrt(vc / max(n_c, 1))),
        err_gaps=math.sqrt(mg), err_total=math.sqrt(total), ci_total=_sqrt_ci(total, se_total),
        cube_measure=m_c, n_cubes=n_c, n_gaps=n_g,
        cell_bound=cell_error_bound(alpha, K, grid.d0, grid.delta),
    )


# --- depth-width trade-off -------------------------------------------------------


def _chunks(n_items: int, n: int) -> list[range]:
    m = -(-n_items // n)
    return [range(c * m, min((c + 1) * m, n_items)) for c in range(n)]


def _block_diag(parts: list, channels: int, d: int) -> FeedForward:
    """Place ``parts[c]`` (a FeedForward on ``d`` or None) on channel ``c`` of ``channels + 1``."""
    D = (channels + 1) * d
    W1s, b1s, W2s = [], [], []
    b2 = np.zeros(D)
    for c, ff in enumerate(parts):
        if ff is None:
            continue
        l = ff.width
        W1 = np.zeros((l, D))
        W1[:, c * d:(c + 1) * d] = to_float(ff.W_1)
        W2 = np.zeros((D, l))
        W2[c * d:(c + 1) * d, :] = to_float(ff.W_2)
        W1s.append(W1)
        W2s.append(W2)
        b1s.append(to_float(ff.b_1))
        b2[c * d:(c + 1) * d] += to_float(ff.b_2)
    if not W1s:
        return FeedForward(np.zeros((0, D)), np.zeros(0), np.zeros((D, 0)), b2)
    return FeedForward(np.concatenate(W1s), np.concatenate(b1s), np.concatenate(W2s, axis=1), b2)


def _linear_ff(A: np.ndarray) -> FeedForward:
    """Residual block adding ``A x`` exactly via ``relu(z) - relu(-z)``."""
    D = A.shape[1]
    keep = np.flatnonzero(np.any(A != 0, axis=1))
    rows = A[keep]
    W1 = np.concatenate([rows, -rows])
    W2 = np.zeros((D, 2 * len(keep)))
    for n, i in enumerate(keep):
        W2[i, n] = 1.0
        W2[i, len(keep) + n] = -1.0
    return FeedForward(W1, np.zeros(W1.shape[0]), W2, np.zeros(D))


@dataclass
class WideNetwork:
    """Channel-parallel network: ``n`` working channels plus one reference copy.

    Stages: replicate, ``D1'`` wide quantizer blocks, one aggregation block
    (channel 0 becomes ``sum_c ch_c - (n-1) ref``), select channel 0,
    attention, replicate, ``D2'`` wide value blocks, aggregation embedding,
    cleanup block. ``D' = D1' + D2' + 3``.
    """

    source: TransformerNetwork
    n: int
    quant_blocks: tuple
    aggregate_block: FeedForward
    value_blocks: tuple
    extra: FeedForward

    @property
    def d(self) -> int:
        return self.source.d

    @property
    def D(self) -> int:
        return len(self.quant_blocks) + len(self.value_blocks) + 3

    @property
    def width(self) -> int:
        ffs = (*self.quant_blocks, *self.value_blocks, self.aggregate_block, self.extra)
        return max(ff.width for ff in ffs)

    def replicate(self, X: np.ndarray) -> np.ndarray:
        return np.concatenate([X] * (self.n + 1), axis=-2)

    def aggregate(self, Z: np.ndarray) -> np.ndarray:
        d, n = self.d, self.n
        chans = [Z[..., c * d:(c + 1) * d, :] for c in range(n)]
        return sum(chans) - (n - 1) * Z[..., n * d:(n + 1) * d, :]

    def forward(self, X) -> np.ndarray:
        src = self.source
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        Xb = X[None] if single else X
        if Xb.min() < 0 or Xb.max() > 1:
            raise ValueError("input outside [0, 1]^{d x L}")
        Dw = (self.n + 1) * self.d
        Z = self.replicate(Xb + src.positional_encoding[None])
        Z = kernels.run_stack(kernels.pack_layers((*self.quant_blocks, self.aggregate_block), Dw), Z)
        Z = Z[:, :self.d, :]
        Z = contextual_forward(src.context, Z)
        Z = self.replicate(Z)
        Z = kernels.run_stack(kernels.pack_layers(self.value_blocks, Dw), Z)
        Z = self.aggregate(Z)
        Z = kernels.run_stack(kernels.pack_layers((self.extra,), self.d), Z)
        return Z[0] if single else Z

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        Y = self.forward(reshape(self.source.plan, x))
        return project_output(self.source.plan, Y, self.source.d_y)

    def summary(self) -> dict:
        s = self.source
        return {"n": self.n, "D_wide": self.D, "W_wide": self.width, "D": s.D, "W": s.width,
                "ratio": self.D * self.width / (s.D * s.width)}


def widen(net: TransformerNetwork, n: int | None = None, target_depth: int | None = None) -> WideNetwork:
    """Run ``n`` channels in parallel (or the fewest channels meeting ``target_depth``)."""
    if net.precision.is_extended or net.value.precision.is_extended:
        raise ValueError("widen requires a double-precision network")
    n_q = net.quantizer.n_layers
    n_a = net.value.params.n_anchors

    def depth(k):
        return -(-n_q // k) + 2 * -(-n_a // k) + 3

    if target_depth is not None:
        if target_depth < 6:
            raise ValueError("target depth below the structural minimum of 6")
        n_max = max(n_q, n_a)
        n = next((k for k in range(1, n_max + 1) if depth(k) <= target_depth), None)
        if n is None:
            raise ValueError("target depth below the structural minimum for this network")
    if n is None or n < 1:
        raise ValueError("n must be a positive integer")
    d = net.d
    qc = _chunks(n_q, n)
    q_blocks = []
    for s in range(len(qc[0])):
        parts = [net.quantizer.layers[ch[s]] if s < len(ch) else None for ch in qc]
        q_blocks.append(_block_diag(parts, n, d))
    Dw = (n + 1) * d
    A = np.zeros((Dw, Dw))
    for c in range(1, n):
        A[:d, c * d:(c + 1) * d] = np.eye(d)
    A[:d, n * d:] = -(n - 1) * np.eye(d)
    agg = _linear_ff(A) if n > 1 else FeedForward(np.zeros((0, Dw)), np.zeros(0),
                                                  np.zeros((Dw, 0)), np.zeros(Dw))
    vc = _chunks(n_a, n)
    v_layers = net.value.layers[:-1]
    v_blocks = []
    for s in range(len(vc[0])):
        for half in (0, 1):
            parts = [v_layers[2 * ch[s] + half] if s < len(ch) else None for ch in vc]
            v_blocks.append(_block_diag(parts, n, d))
    return WideNetwork(net, n, tuple(q_blocks), agg, tuple(v_blocks), net.value.layers[-1])


def rate_sweep(eps_list, alpha: float = 0.5, K: float = 1.0, d: int = 1, L: int = 2) -> dict:
    """Formula-level block count along an ``eps`` sweep and the fitted slope of
    ``log D`` against ``log(1/eps)`` (expected near ``d0/alpha``)."""
    rows = []
    for eps in eps_list:
        p = select_parameters(eps, alpha, K, d, L)
        g = build_grid(p.delta, p.delta_star, d, L)
        rows.append({"eps": eps, "delta": p.delta, "delta_star": p.delta_star, "M": g.M,
                     "D": block_count(d, L, g.M)})
    if len(rows) < 2:
        raise ValueError("need at least two sweep points")
    x = np.log([1.0 / r["eps"] for r in rows])
    y = np.log([r["D"] for r in rows])
    return {"rows": rows, "slope": float(np.polyfit(x, y, 1)[0]), "expected": d * L / alpha}
