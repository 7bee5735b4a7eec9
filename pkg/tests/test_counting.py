import math

import numpy as np
import pytest

from holder_transformer.counting import (OpTally, closed_form_omega, closed_form_t,
                                         count_closed_form, count_instrumented, vc_sweep,
                                         vc_upper_bound)
from holder_transformer.grid import build_grid, quantize_target
from holder_transformer.network import build_network
from holder_transformer.reshape import get_target


def _net(d, L, M, cleanup="ungated"):
    step = 1.0 / M
    grid = build_grid(0.8 * step, 0.19 * step, d, L)
    return build_network(grid, quantize_target(get_target("bump", 0.5, 1.0, d * L), grid), 1,
                         cleanup=cleanup)


def test_closed_form_spot_values():
    c = count_closed_form(2, 2, 2)
    assert c.per_part["context"]["params"] == 16
    assert c.per_part["context"]["ops"] == 4 * (16 + 8 - 4) + 8 - 2 == 86
    assert c.per_part["context"]["exp"] == 4
    assert c.omega == 2 * 2 * 2 * 16 + 16 + 2 + 10 == 156
    assert c.per_part["quantizer"]["params"] == 2 + 4


def test_closed_form_formula():
    for d, L, M in [(1, 2, 2), (2, 3, 4), (3, 2, 5)]:
        P = L * M ** (d * L)
        t = ((25 * d * L + 6 * d + 5 * L) * P + 13 * d * d * L * L * M + 8 * d * d * L
             + 4 * d * L * L + 2 * L * L + 5 * L * M - 2 * d * L - L + 17)
        assert closed_form_t(d, L, M) == t
        assert closed_form_omega(d, L, M) == 2 * d * L * M ** (d * L) + 4 * d * d + M + 10


def test_taxonomy_sums():
    c = count_closed_form(1, 3, 2)
    tax = c.taxonomy
    assert tax["arithmetic"] + tax["exponentials"] + tax["jumps"] == c.t
    assert tax["exponentials"] == 9


@pytest.mark.parametrize("cfg", [(1, 2, 2), (2, 2, 2), (1, 2, 3), (2, 2, 3), (1, 3, 3)])
def test_instrumented_matches_closed_form(cfg):
    inst = count_instrumented(_net(*cfg))
    closed = count_closed_form(*cfg)
    assert (inst.t, inst.omega) == (closed.t, closed.omega)
    for part in ("context", "quantizer"):
        assert inst.per_part[part]["ops"] == closed.per_part[part]["ops"]


def test_context_exponentials_d2():
    inst = count_instrumented(_net(2, 2, 2))
    assert inst.per_part["context"]["exp"] == 4
    assert inst.per_part["context"]["ops"] == 86


def test_softmax_tally():
    # one softmax column of length L: L exponentials, L-1 additions, L divisions
    T = OpTally()
    T.part = "context"
    col = [0.3, -1.2, 2.0, 0.0, 0.7]
    e = [T.exp(v) for v in col]
    tot = e[0]
    for v in e[1:]:
        tot = T.add(tot, v)
    p = [T.div(v, tot) for v in e]
    L = len(col)
    assert T.counts["context"]["exp"] == L
    assert T.counts["context"]["arith"] == 2 * L - 1
    assert sum(p) == pytest.approx(1.0)


def test_l_greater_than_m_noted():
    inst = count_instrumented(_net(1, 3, 2))
    assert any("L > M" in n for n in inst.notes)


def test_non_ungated_cleanup_noted():
    assert count_instrumented(_net(1, 2, 2, cleanup="masked")).notes


def test_vc_bound_examples():
    assert vc_upper_bound(100, 10) == pytest.approx(1e5 * (10 + 19 * math.log2(90)))
    assert vc_upper_bound(100, 10) == pytest.approx(1.334e7, rel=1e-3)
    assert vc_upper_bound(7, 1) == pytest.approx(49 * (1 + 19 * math.log2(9)))
    with pytest.raises(ValueError):
        vc_upper_bound(0, 1)


def test_vc_bound_monotone():
    rng = np.random.default_rng(0)
    for _ in range(200):
        t, w = rng.integers(1, 10 ** 6, size=2)
        dt, dw = rng.integers(1, 100, size=2)
        assert vc_upper_bound(t + dt, w) > vc_upper_bound(t, w)
        assert vc_upper_bound(t, w + dw) > vc_upper_bound(t, w)


def test_vc_sweep_slope():
    assert abs(vc_sweep([20, 50, 100, 200, 500, 1000])["slope"] - 4) <= 0.3
