"""Operation and parameter counts, and the VC-dimension bound built on them.

Operations follow a four-way taxonomy: exponentials, arithmetic (``+ - * /``),
comparison jumps (one per ReLU) and outputs. The closed form adds up the
per-part rows. The instrumented interpreter re-executes a built network with
element-wise arithmetic, tallies every scalar operation, and registers every
distinct parameter it reads.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .precision import to_float

__all__ = [
    "CountReport",
    "count_closed_form",
    "count_instrumented",
    "closed_form_t",
    "closed_form_omega",
    "vc_upper_bound",
    "vc_sweep",
    "OpTally",
]

PARTS = ("positional", "quantizer", "context", "value_ff2", "value_ff3", "extra")


@dataclass
class CountReport:
    d: int
    L: int
    M: int
    per_part: dict  # part -> {"ops", "params", "exp", "arith", "jump"}
    t: int
    omega: int
    taxonomy: dict  # exponentials, arithmetic, jumps, outputs
    stability_ops: int = 0
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"d": self.d, "L": self.L, "M": self.M, "per_part": self.per_part, "t": self.t,
                "omega": self.omega, "taxonomy": self.taxonomy,
                "stability_ops": self.stability_ops, "notes": self.notes}


def closed_form_t(d: int, L: int, M: int) -> int:
    P = L * M ** (d * L)
    return ((25 * d * L + 6 * d + 5 * L) * P + 13 * d * d * L * L * M + 8 * d * d * L
            + 4 * d * L * L + 2 * L * L + 5 * L * M - 2 * d * L - L + 17)


def closed_form_omega(d: int, L: int, M: int) -> int:
    return 2 * d * L * M ** (d * L) + 4 * d * d + M + 10


def count_closed_form(d: int, L: int, M: int) -> CountReport:
    """Evaluate every per-part row and the totals."""
    if min(d, L, M) < 1:
        raise ValueError("d, L, M must be positive")
    P = L * M ** (d * L)
    rows = {
        "positional": {"ops": d * L, "exp": 0, "jump": 0},
        "quantizer": {"ops": 13 * (d * L) ** 2 * M + 5 * L * M + 3, "exp": 0,
                      "jump": 3 * d * L * d * L * M},
        "context": {"ops": d * L * (8 * d + 4 * L - 4) + 2 * L * L - L, "exp": L * L, "jump": 0},
        "value_ff2": {"ops": (13 * d * L + 4 * d) * P + 7, "exp": 0, "jump": 4 * d * L * P},
        "value_ff3": {"ops": (12 * d * L + 5 * L + 2 * d) * P + 7, "exp": 0,
                      "jump": (2 * d * L + 2 * L) * P},
        "extra": {"ops": d * L, "exp": 0, "jump": 0},
    }
    params = {"positional": 0, "quantizer": M + 4, "context": 4 * d * d,
              "value_ff2": 0, "value_ff3": 0, "extra": 0}
    value_params = 2 * d * L * M ** (d * L) + 6
    for k, row in rows.items():
        row["arith"] = row["ops"] - row["exp"] - row["jump"]
        row["params"] = params[k]
    rows["value_ff2"]["params"] = value_params  # the row spans the whole value mapping
    t = sum(r["ops"] for r in rows.values())
    omega = sum(r["params"] for r in rows.values())
    tax = {"exponentials": sum(r["exp"] for r in rows.values()),
           "jumps": sum(r["jump"] for r in rows.values()), "outputs": 1}
    tax["arithmetic"] = t - tax["exponentials"] - tax["jumps"]
    assert t == closed_form_t(d, L, M) and omega == closed_form_omega(d, L, M)
    return CountReport(d, L, M, rows, t, omega, tax)


# --- instrumented interpreter ----------------------------------------------------


class OpTally:
    """Scalar arithmetic that counts what it does, attributed to a current part."""

    def __init__(self):
        self.part = "positional"
        self.counts = {p: Counter() for p in PARTS}
        self.params = {p: set() for p in PARTS}
        self.stability = 0

    def add(self, a, b):
        self.counts[self.part]["arith"] += 1
        return a + b

    def sub(self, a, b):
        self.counts[self.part]["arith"] += 1
        return a - b

    def mul(self, a, b):
        self.counts[self.part]["arith"] += 1
        return a * b

    def div(self, a, b):
        self.counts[self.part]["arith"] += 1
        return a / b

    def exp(self, a):
        self.counts[self.part]["exp"] += 1
        return math.exp(a)

    def relu(self, a):
        self.counts[self.part]["jump"] += 1
        return a if a > 0 else 0.0

    def param(self, key, value):
        self.params[self.part].add(key)
        return value

    def ops(self, part: str) -> int:
        c = self.counts[part]
        return c["arith"] + c["exp"] + c["jump"]


def _dot(T: OpTally, row, col):
    acc = T.mul(row[0], col[0])
    for a, b in zip(row[1:], col[1:]):
        acc = T.add(acc, T.mul(a, b))
    return acc


def _matmul(T: OpTally, A, B):
    """``A (p x q) @ B (q x s)`` on nested lists."""
    Bt = list(zip(*B))
    return [[_dot(T, row, col) for col in Bt] for row in A]


def _run_quantizer(T: OpTally, net, X):
    grid = net.grid
    d, L, M = grid.d, grid.L, grid.M
    T.part = "quantizer"
    delta = T.param("delta", grid.delta)
    dstar = T.param("delta*", grid.delta_star)
    step = T.add(delta, dstar)
    r1 = T.div(delta, dstar)
    r2 = T.div(step, dstar)
    neg = T.param(-1, -1.0)
    offsets = {}
    for j in range(1, L + 1):
        for k in range(1, M + 1):
            km1 = T.sub(T.param(k, float(k)), T.param(1, 1.0))
            T.param(k - 1, float(k - 1))
            c0 = T.add(T.mul(km1, step), T.param(j, float(j)))
            offsets[j, k] = (c0, T.add(c0, delta), T.add(c0, step))
    zero = T.param(0, 0.0)
    one = T.param(1, 1.0)
    coef = (neg, r2)  # the third term enters through a subtraction
    for i in range(d):
        for j in range(1, L + 1):
            for k in range(1, M + 1):
                c = offsets[j, k]
                for col in range(L):
                    for row in range(d):
                        x = X[row][col]
                        h = [T.relu(T.sub(x, c[0])), T.relu(T.sub(x, c[1])), T.relu(T.sub(x, c[2]))]
                        v = T.add(T.mul(coef[0], h[0]), T.mul(coef[1], h[1]))
                        v = T.sub(v, T.mul(r1, h[2]))
                        v = T.mul(one if row == i else zero, v)
                        X[row][col] = T.add(x, v)
    return X


def _run_context(T: OpTally, net, X):
    T.part = "context"
    w = net.context
    d, L = net.d, net.L
    mats = {}
    for name, W in (("W_K", w.W_K), ("W_Q", w.W_Q), ("W_V", w.W_V), ("W_O", w.W_O)):
        Wf = to_float(W)
        mats[name] = [[T.param((name, a, b), float(Wf[a, b])) for b in range(d)] for a in range(d)]
    Kx = _matmul(T, mats["W_K"], X)
    Qx = _matmul(T, mats["W_Q"], X)
    Vx = _matmul(T, mats["W_V"], X)
    S = _matmul(T, [list(r) for r in zip(*Kx)], Qx)  # S[key][query]
    P = [[0.0] * L for _ in range(L)]
    for q in range(L):
        col = [S[c][q] for c in range(L)]
        mx = max(col)
        T.stability += L  # max-subtraction, excluded from t
        e = [T.exp(v - mx) for v in col]
        tot = e[0]
        for v in e[1:]:
            tot = T.add(tot, v)
        for c in range(L):
            P[c][q] = T.div(e[c], tot)
    VP = _matmul(T, Vx, P)
    OVP = _matmul(T, mats["W_O"], VP)
    return [[T.add(X[a][c], OVP[a][c]) for c in range(L)] for a in range(d)]


def _run_value(T: OpTally, net, X):
    vm = net.value
    p = vm.params
    d, L = net.d, net.L
    anchors = to_float(vm.anchors)
    targets = to_float(vm.targets)
    T.part = "value_ff2"
    g1 = T.param("gamma1", float(p.gamma1))
    g2 = T.param("gamma2", float(p.gamma2))
    r = T.param("r", float(p.r))
    K = T.param("K", float(p.K))
    dd = T.param("d", float(d))
    sd = T.param("sqrt_d", math.sqrt(d))
    c_slope = T.div(T.mul(T.mul(2.0, dd), r), g2)
    two_sd = T.mul(2.0, sd)
    a = T.div(g1, two_sd)
    b = T.div(T.add(g1, g2), two_sd)
    T.part = "value_ff3"
    label = T.mul(sd, r)
    dlabel = T.mul(dd, label)
    shift = T.add(r, K)
    inv_g2 = T.div(1.0, g2)
    lab_g2 = T.div(label, g2)
    gate_hi = T.add(dlabel, g2)
    rem_lo = T.sub(g2, label)
    sign = float(p.anchor_sign)
    for n in range(anchors.shape[0]):
        T.part = "value_ff2"
        idv = [T.param(("id", n, j), anchors[n, j]) for j in range(d)]
        shifted = [(T.sub(v, b), T.sub(v, a), T.add(v, a), T.add(v, b)) for v in idv]
        Z = [[0.0] * L for _ in range(d)]
        for col in range(L):
            for j in range(d):
                x = X[j][col]
                s = shifted[j]
                h = [T.relu(T.sub(x, s[q])) for q in range(4)]
                v = T.sub(T.sub(h[0], h[1]), h[2])
                v = T.add(v, h[3])
                Z[j][col] = T.add(x, T.mul(c_slope, v))
        T.part = "value_ff3"
        Y = [T.param(("y", n, j), targets[n, j]) for j in range(d)]
        wv = [T.sub(T.add(Y[j], sign * shift), idv[j]) for j in range(d)]
        out = [[0.0] * L for _ in range(d)]
        for col in range(L):
            csum = T.mul(1.0, Z[0][col])
            for j in range(1, d):
                csum = T.add(csum, T.mul(1.0, Z[j][col]))
            u1 = T.relu(T.sub(csum, dlabel))
            u2 = T.relu(T.sub(csum, gate_hi))
            gate = T.mul(T.sub(u1, u2), inv_g2)
            for j in range(d):
                z = Z[j][col]
                q1 = T.relu(T.add(z, rem_lo))
                q2 = T.relu(T.sub(z, label))
                s3 = T.sub(T.mul(lab_g2, q1), T.mul(lab_g2, q2))
                out[j][col] = T.sub(T.add(z, T.mul(wv[j], gate)), s3)
        X = out
    return X


def _run_extra(T: OpTally, net, X):
    T.part = "extra"
    p = net.value.params
    d, L = net.d, net.L
    shift = -float(p.anchor_sign) * (float(p.r) + float(p.K))
    if p.cleanup == "ungated":
        return [[T.add(X[j][c], shift) for c in range(L)] for j in range(d)]
    dr = d * float(p.r)
    coef = shift / dr
    out = [[0.0] * L for _ in range(d)]
    for c in range(L):
        s = X[0][c]
        for j in range(1, d):
            s = T.add(s, X[j][c])
        g = T.sub(T.relu(-s), T.relu(T.sub(-s, dr)))
        g = T.mul(coef, g)
        for j in range(d):
            v = T.add(X[j][c], g)
            if p.cleanup == "masked":
                v = T.sub(v, T.relu(X[j][c]))
            out[j][c] = v
    return out


def _interpret(net, X0) -> tuple[OpTally, np.ndarray]:
    T = OpTally()
    d, L = net.d, net.L
    E = net.positional_encoding
    T.part = "positional"
    X = [[T.add(float(X0[j, c]), float(E[j, c])) for c in range(L)] for j in range(d)]
    X = _run_quantizer(T, net, X)
    X = _run_context(T, net, X)
    X = _run_value(T, net, X)
    X = _run_extra(T, net, X)
    return T, np.array(X)


def count_instrumented(net, X=None, check_inputs: int = 2, seed: int = 0) -> CountReport:
    """Tally a forward pass; repeats on extra random inputs to assert input independence."""
    rng = np.random.default_rng(seed)
    if X is None:
        X, _ = net.grid.sample_cubes(1, rng)
        X = X[0]
    T, out = _interpret(net, np.asarray(X, dtype=np.float64))
    notes = []
    if not net.precision.is_extended:
        ref = net.forward(X)
        dev = float(np.max(np.abs(out - ref)))
        if dev > 1e-6:
            notes.append(f"interpreter output deviates from forward by {dev:.3g}")
    for _ in range(check_inputs - 1):
        Xr = rng.random((net.d, net.L))
        T2, _ = _interpret(net, Xr)
        if any(T2.counts[p] != T.counts[p] for p in PARTS):
            raise AssertionError("operation tally depends on the input")
    rows = {}
    for p in PARTS:
        c = T.counts[p]
        rows[p] = {"ops": T.ops(p), "exp": c["exp"], "arith": c["arith"], "jump": c["jump"],
                   "params": 0}
    q_params = T.params["quantizer"]
    rows["quantizer"]["params"] = len(q_params)
    rows["context"]["params"] = len(T.params["context"])
    rows["value_ff2"]["params"] = len(T.params["value_ff2"] | T.params["value_ff3"])
    if net.L > net.grid.M:
        notes.append("L > M: column offsets j > M add quantizer parameters beyond M+4")
    if net.value.params.cleanup != "ungated":
        notes.append(f"cleanup '{net.value.params.cleanup}' differs from the constant-shift row")
    t = sum(r["ops"] for r in rows.values())
    omega = sum(r["params"] for r in rows.values())
    tax = {"exponentials": sum(r["exp"] for r in rows.values()),
           "arithmetic": sum(r["arith"] for r in rows.values()),
           "jumps": sum(r["jump"] for r in rows.values()), "outputs": 1}
    return CountReport(net.d, net.L, net.grid.M, rows, t, omega, tax, T.stability, notes)


# --- VC bound --------------------------------------------------------------------


def vc_upper_bound(t: float, omega: float) -> float:
    """``t^2 omega (omega + 19 log2(9 omega))``."""
    if t < 1 or omega < 1:
        raise ValueError("t and omega must be at least 1")
    return float(t) ** 2 * omega * (omega + 19 * math.log2(9 * omega))


def vc_sweep(Ms, d: int = 1, L: int = 2) -> dict:
    """Evaluate ``D``, ``t``, ``omega`` and the VC bound along a grid sweep; fit the log-log slope."""
    from .network import block_count

    rows = []
    for M in Ms:
        t = closed_form_t(d, L, M)
        w = closed_form_omega(d, L, M)
        rows.append({"M": M, "D": block_count(d, L, M), "t": t, "omega": w,
                     "vc": vc_upper_bound(t, w)})
    x = np.log([r["D"] for r in rows])
    y = np.log([r["vc"] for r in rows])
    slope = float(np.polyfit(x, y, 1)[0]) if len(rows) >= 2 else float("nan")
    return {"rows": rows, "slope": slope}
