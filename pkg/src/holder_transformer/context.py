"""Single-head softmax contextual mapping and its separation certificate.

Weights are rank one: ``W_K = u v^T``, ``W_Q = u' v^T``, ``W_V = u'' v^T`` with
``u = c e_1``, ``u' = u'' = e_1`` and ``W_O = beta/(4 r_max) e_1 e_1^T``. With
the proven scale ``c = (|V|+1)^4 d delta0 / (beta r_min)`` the scores reach
``~1e5`` even on the smallest grid. The attention then acts as a hard max in
IEEE doubles, so the certificate has to be computed in extended precision.
A ``tempered`` scale keeps scores O(1) for double-precision builds; its
separation is measured rather than proven.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from . import kernels
from .grid import GridSpec
from .precision import DOUBLE, Precision, as_array, extended, to_float, working_context
from .seq import AttentionHead, attention_forward, softmax_columns

__all__ = [
    "ContextWeights",
    "SeparationCert",
    "PrecisionError",
    "ContextualCollision",
    "build_context_layer",
    "contextual_forward",
    "verify_contextual_ids",
    "boltz",
    "theory_constants",
    "log_gamma_closed_form",
    "required_bits",
    "vocabulary",
]

SCORE_LIMIT = 700.0
TEMPERED_SPREADS = (0.01, 0.1, 0.25, 0.5, 1.0, 2.0)


class PrecisionError(ArithmeticError):
    pass


class ContextualCollision(RuntimeError):
    pass


@dataclass(frozen=True)
class ContextWeights:
    v: np.ndarray
    u: np.ndarray
    u_prime: np.ndarray
    u_dprime: np.ndarray
    W_O: np.ndarray
    scale: object  # c, float or mpfr
    scale_mode: str
    precision: Precision
    beta: float
    r_max: float

    @property
    def d(self) -> int:
        return self.v.shape[0]

    @property
    def W_K(self) -> np.ndarray:
        return np.outer(self.u, self.v)

    @property
    def W_Q(self) -> np.ndarray:
        return np.outer(self.u_prime, self.v)

    @property
    def W_V(self) -> np.ndarray:
        return np.outer(self.u_dprime, self.v)

    def head(self) -> AttentionHead:
        return AttentionHead(self.W_K, self.W_Q, self.W_V, self.W_O)

    def head_float(self) -> tuple[np.ndarray, ...]:
        return tuple(to_float(W) for W in (self.W_K, self.W_Q, self.W_V, self.W_O))


@dataclass
class SeparationCert:
    r_min: float
    r_max: float
    beta: float
    r: float
    delta0: float
    vocab_size: int
    vocab_actual: int
    kappa: float
    log_delta1: float
    log_gamma_theory: float
    log_gamma_closed_form: float
    scale_mode: str = "paper"
    scale: float = 0.0
    spread: float | None = None
    precision_bits: int = 53
    gamma_emp: object = None
    log_gamma_emp: float = float("nan")
    max_norm: float = float("nan")
    min_norm: float = float("nan")
    max_head_norm: float = float("nan")
    min_token_separation: float = float("nan")
    n_ids: int = 0
    sandwich_ok: bool = False
    ids: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "r_min": self.r_min, "r_max": self.r_max, "beta": self.beta, "r": self.r,
            "delta0": self.delta0, "kappa": self.kappa, "log_delta1": self.log_delta1,
            "log_gamma_theory": self.log_gamma_theory,
            "log_gamma_closed_form": self.log_gamma_closed_form,
            "gamma_emp": float(self.gamma_emp) if self.gamma_emp is not None else None,
            "log_gamma_emp": self.log_gamma_emp,
            "vocab_size": self.vocab_size, "vocab_actual": self.vocab_actual,
            "scale_mode": self.scale_mode, "scale": self.scale, "spread": self.spread,
            "precision_bits": self.precision_bits, "max_norm": self.max_norm,
            "min_norm": self.min_norm, "max_head_norm": self.max_head_norm,
            "min_token_separation": self.min_token_separation, "n_ids": self.n_ids,
            "sandwich_ok": self.sandwich_ok,
        }


def theory_constants(grid: GridSpec, vocab: str = "bound") -> dict:
    """Norm/separation constants of the positional grid and derived quantities.

    ``vocab='bound'`` uses ``|V| = L M^d0`` as in the value-mapping constants;
    ``'actual'`` counts distinct tokens (``L M^d``).
    """
    d, L, M = grid.d, grid.L, grid.M
    if L < 2:
        raise ValueError("contextual mapping needs L >= 2")
    r_min = math.sqrt(d)
    r_max = math.sqrt(d) * (L + 1)
    beta = math.sqrt(d) * grid.step
    V = L * M ** grid.d0 if vocab == "bound" else L * M ** d
    delta0 = 2 * math.log(L) + 3
    # integer power kept exact before converting
    Vp4 = float((V + 1) ** 4)
    kappa = Vp4 * d * delta0 * r_max ** 2 / (beta * r_min)
    log_delta1 = 2 * math.log(math.log(L)) - 2 * kappa
    log_gamma = (2 * math.log(beta) + math.log(r_min) + log_delta1
                 - math.log(4 * Vp4 * d * delta0 * r_max ** 2))
    return {
        "r_min": r_min, "r_max": r_max, "beta": beta, "r": r_max + beta / 4, "V": V,
        "V_actual": L * M ** d, "delta0": delta0, "kappa": kappa, "log_delta1": log_delta1,
        "log_gamma": log_gamma, "c_paper": Vp4 * d * delta0 / (beta * r_min),
    }


def log_gamma_closed_form(grid: GridSpec) -> float:
    """Log of the grid-specialised separation constant, evaluated term by term."""
    d, L, M = grid.d, grid.L, grid.M
    s = grid.step
    lnL = math.log(L)
    V1 = float((L * M ** grid.d0 + 1) ** 4)
    pref = (2 * math.log(s) + 2 * math.log(lnL)
            - math.log(4 * math.sqrt(d) * (2 * lnL + 3) * (L + 1) ** 2 * V1))
    expo = -V1 * 2 * d * (2 * lnL + 3) * (L + 1) ** 2 / s
    return pref + expo


def vocabulary(grid: GridSpec) -> np.ndarray:
    """Distinct tokens of the positional grid, shape ``(L M^d, d)``."""
    toks = []
    levels = grid.levels
    import itertools

    for j in range(1, grid.L + 1):
        for combo in itertools.product(levels, repeat=grid.d):
            toks.append(np.array(combo) + j)
    return np.array(toks)


def _sandwich_holds(v: np.ndarray, vocab_pts: np.ndarray, V_bound: int) -> bool:
    """Check ``(|V|+1)^-2 d^-1/2 ||a-b|| <= |v.(a-b)| <= ||a-b||`` on ``V u {0}``."""
    pts = np.vstack([vocab_pts, np.zeros((1, vocab_pts.shape[1]))])
    d = pts.shape[1]
    proj = pts @ v
    lo_coef = 1.0 / ((V_bound + 1) ** 2 * math.sqrt(d))
    n = pts.shape[0]
    for a in range(n - 1):
        diff = pts[a + 1:] - pts[a]
        nrm = np.linalg.norm(diff, axis=1)
        pv = np.abs(proj[a + 1:] - proj[a])
        if np.any(pv < lo_coef * nrm) or np.any(pv > nrm * (1 + 1e-12)):
            return False
    return True


def _find_direction(grid: GridSpec, rng: np.random.Generator, V_bound: int,
                    max_draws: int) -> np.ndarray:
    vocab_pts = vocabulary(grid)
    d = grid.d
    for _ in range(max_draws):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        if _sandwich_holds(v, vocab_pts, V_bound):
            return v
    raise ContextualCollision("separation direction not found")


def build_context_layer(grid: GridSpec, seed: int = 0, precision: Precision | None = None,
                        scale: str | float = "paper", vocab: str = "bound",
                        tempered_spread: float | None = None, max_draws: int = 10**6):
    """Construct the attention weights and the theory part of the certificate.

    ``scale`` is ``'paper'`` (the proven constant), ``'tempered'`` (largest
    score spread equal to ``tempered_spread``) or an explicit float. A
    tempered build without a spread tries ``TEMPERED_SPREADS`` and keeps the
    one with the largest measured separation. With
    ``precision=None`` the paper scale selects extended precision with enough
    bits to resolve every softmax weight; other scales use doubles.
    """
    if scale == "tempered" and tempered_spread is None:
        best = None
        for sp in TEMPERED_SPREADS:
            w, c = build_context_layer(grid, seed, precision, scale, vocab, sp, max_draws)
            try:
                c = verify_contextual_ids(w, grid, c)
            except ContextualCollision:
                continue
            if best is None or c.gamma_emp > best[1].gamma_emp:
                best = (w, c)
        if best is None:
            raise ContextualCollision("contextual collision at every tempered scale")
        return best
    th = theory_constants(grid, vocab)
    rng = np.random.default_rng(seed)
    v = _find_direction(grid, rng, th["V"], max_draws)
    d = grid.d
    e1 = np.zeros(d)
    e1[0] = 1.0
    W_O = np.zeros((d, d))
    W_O[0, 0] = th["beta"] / (4 * th["r_max"])
    if scale == "paper":
        c_float = th["c_paper"]
    elif scale == "tempered":
        pmax = float(np.max(np.abs(vocabulary(grid) @ v)))
        c_float = tempered_spread / pmax ** 2
    else:
        c_float = float(scale)
    mode = scale if isinstance(scale, str) else "explicit"
    if precision is None:
        if mode == "paper":
            precision = extended(required_bits(grid, v, c_float))
        else:
            precision = DOUBLE
    if precision.is_extended:
        with working_context(precision):
            # recompute c at full width from exact integer parts
            V1 = gmpy2.mpz(th["V"] + 1) ** 4
            delta0 = 2 * gmpy2.log(gmpy2.mpfr(grid.L)) + 3
            beta = gmpy2.sqrt(gmpy2.mpfr(d)) * (gmpy2.mpfr(grid.delta) + gmpy2.mpfr(grid.delta_star))
            r_min = gmpy2.sqrt(gmpy2.mpfr(d))
            c = V1 * d * delta0 / (beta * r_min) if mode == "paper" else gmpy2.mpfr(c_float)
            u = as_array(e1, precision) * c
            W_O_x = as_array(W_O, precision)
            W_O_x[0, 0] = beta / (4 * gmpy2.sqrt(gmpy2.mpfr(d)) * (grid.L + 1))
            vx = as_array(v, precision)
        weights = ContextWeights(vx, u, as_array(e1, precision), as_array(e1, precision),
                                 W_O_x, c, mode, precision, th["beta"], th["r_max"])
    else:
        weights = ContextWeights(v, c_float * e1, e1.copy(), e1.copy(), W_O, c_float, mode,
                                 precision, th["beta"], th["r_max"])
    cert = SeparationCert(
        r_min=th["r_min"], r_max=th["r_max"], beta=th["beta"], r=th["r"], delta0=th["delta0"],
        vocab_size=th["V"], vocab_actual=th["V_actual"], kappa=th["kappa"],
        log_delta1=th["log_delta1"], log_gamma_theory=th["log_gamma"],
        log_gamma_closed_form=log_gamma_closed_form(grid), scale_mode=mode,
        scale=float(c_float), spread=tempered_spread if mode == "tempered" else None,
        precision_bits=precision.bits,
    )
    return weights, cert


def required_bits(grid: GridSpec, v: np.ndarray, c: float, guard: int = 256) -> int:
    """Mantissa width that resolves the smallest softmax weight on the grid."""
    proj = grid.positional_points()
    a = np.einsum("d,ndl->nl", v, proj)
    spread = 0.0
    for row in a:
        s = c * np.abs(np.outer(row, row))
        spread = max(spread, float(np.max(s.max(axis=0) - s.min(axis=0))))
    return int(math.ceil(spread / math.log(2))) + guard


def contextual_forward(weights: ContextWeights, X, precision: Precision | None = None) -> np.ndarray:
    """``X + W_O W_V X softmax((W_K X)^T W_Q X)`` for ``(d, L)`` or ``(N, d, L)``."""
    precision = precision or weights.precision
    X = np.asarray(X)
    single = X.ndim == 2
    Xb = X[None] if single else X
    if precision.is_extended:
        with working_context(precision):
            Z = as_array(Xb, precision) if Xb.dtype != object else Xb
            out = attention_forward([weights.head()], Z)
    else:
        Wk, Wq, Wv, Wo = weights.head_float()
        Xf = Xb.astype(np.float64)
        p = np.einsum("d,ndl->nl", to_float(weights.v), Xf)
        smax = float(weights.scale) * float(np.max(np.abs(p))) ** 2
        if smax > SCORE_LIMIT:
            raise PrecisionError(
                f"attention scores reach {smax:.3g} > {SCORE_LIMIT}; use extended precision")
        out = kernels.attention_batch(Xf, Wk, Wq, Wv, Wo)
    return out[0] if single else out


def boltz(a, precision: Precision = DOUBLE):
    """Boltzmann operator ``a^T softmax(a)``."""
    with working_context(precision):
        a = as_array(np.asarray(a).reshape(-1, 1), precision)
        p = softmax_columns(a)
        return (a[:, 0] * p[:, 0]).sum()


def _pairwise_min(ids: np.ndarray, tokens: np.ndarray, beta: float):
    """Return ``(min distance, min distance over distinct-token pairs)``."""
    n = ids.shape[0]
    if ids.dtype == object:
        best = None
        best_tok = None
        for a in range(n - 1):
            diff = ids[a + 1:] - ids[a]
            dist = np.array([gmpy2.sqrt(sum(x * x for x in row)) for row in diff], dtype=object)
            same = np.all(tokens[a + 1:] == tokens[a], axis=1)
            m = min(dist)
            best = m if best is None or m < best else best
            if np.any(~same):
                mt = min(dist[~same])
                best_tok = mt if best_tok is None or mt < best_tok else best_tok
        return best, best_tok
    from scipy.spatial import cKDTree

    tree = cKDTree(ids)
    dist, _ = tree.query(ids, k=2)
    best = float(dist[:, 1].min())
    pairs = tree.query_pairs(beta / 2 * (1 - 1e-12), output_type="ndarray")
    best_tok = math.inf
    if len(pairs):
        diff_tok = np.any(tokens[pairs[:, 0]] != tokens[pairs[:, 1]], axis=1)
        if np.any(diff_tok):
            pp = pairs[diff_tok]
            best_tok = float(np.linalg.norm(ids[pp[:, 0]] - ids[pp[:, 1]], axis=1).min())
    if not math.isfinite(best_tok):
        best_tok = beta / 2  # every distinct-token pair is at least beta/2 apart
    return best, best_tok


def verify_contextual_ids(weights: ContextWeights, grid: GridSpec, cert: SeparationCert,
                          precision: Precision | None = None) -> SeparationCert:
    """Enumerate every positional grid sequence and certify its contextual IDs.

    Fills norms, head norms, token separation and ``gamma_emp`` (smallest
    pairwise ID distance). Raises ``ContextualCollision`` on a zero distance.
    """
    precision = precision or weights.precision
    G = grid.positional_points()
    out = contextual_forward(weights, G, precision)
    d, L = grid.d, grid.L
    ids = np.swapaxes(out, 1, 2).reshape(-1, d)  # (n_points * L, d), column-major per point
    tokens = np.swapaxes(G, 1, 2).reshape(-1, d)
    with working_context(precision):
        if ids.dtype == object:
            head = ids - as_array(tokens, precision)
            head_norm = max(gmpy2.sqrt(sum(x * x for x in row)) for row in head)
            norms = [gmpy2.sqrt(sum(x * x for x in row)) for row in ids]
            max_norm, min_norm = max(norms), min(norms)
        else:
            head_norm = float(np.linalg.norm(ids - tokens, axis=1).max())
            nrm = np.linalg.norm(ids, axis=1)
            max_norm, min_norm = float(nrm.max()), float(nrm.min())
        gamma, tok_sep = _pairwise_min(ids, tokens, cert.beta)
        if gamma is None or gamma <= 0:
            raise ContextualCollision("contextual collision: two IDs coincide")
        cert.gamma_emp = gamma
        cert.log_gamma_emp = float(gmpy2.log(gamma)) if not isinstance(gamma, float) else math.log(gamma)
    cert.max_norm = float(max_norm)
    cert.min_norm = float(min_norm)
    cert.max_head_norm = float(head_norm)
    cert.min_token_separation = float(tok_sep) if tok_sep is not None else float("inf")
    cert.n_ids = ids.shape[0]
    cert.sandwich_ok = _sandwich_holds(to_float(weights.v), vocabulary(grid), cert.vocab_size)
    cert.ids = out
    return cert
