import numpy as np
import pytest

from holder_transformer.grid import PiecewiseConstantFn, build_grid, embed_output
from holder_transformer.network import (BuildError, block_count, build_approximator,
                                        estimate_l2_error, rate_sweep, widen)
from holder_transformer.precision import to_float
from holder_transformer.reshape import flatten, get_target, reshape


@pytest.fixture(scope="module")
def net():
    return build_approximator(get_target("coord_bump", 0.5, 1.0, 2), d=1, L=2, delta=0.2, delta_star=0.05)


def test_block_count(net):
    assert net.grid.M == 4
    assert block_count(1, 2, 4) == 2 * 4 + 2 * 2 * 16 + 2 == 74
    assert net.D == 74
    assert [b.tag for b in net.blocks].count("context") == 1


def test_grid_outputs(net):
    G = net.grid.points()
    np.testing.assert_allclose(net.forward(G), net.table.table, atol=1e-9)
    y = net(flatten(net.plan, G))
    np.testing.assert_allclose(y, flatten(net.plan, net.table.table), atol=1e-9)


def test_literal_blocks_match_fast_path(net):
    X, _ = net.grid.sample_cubes(20, np.random.default_rng(0))
    np.testing.assert_allclose(to_float(net.forward_blocks(X)), net.forward(X), atol=1e-9)


def test_constant_target_on_cubes():
    f = get_target("constant:0.5", 0.5, 1.0, 2)
    n = build_approximator(f, d=1, L=2, delta=0.2, delta_star=0.05)
    X, _ = n.grid.sample_cubes(500, np.random.default_rng(1))
    np.testing.assert_allclose(n.forward(X), 0.5, atol=1e-9)


def test_masked_cleanup_shrinks_gap_outputs(net):
    f = get_target("coord_bump", 0.5, 1.0, 2)
    gated = build_approximator(f, d=1, L=2, delta=0.2, delta_star=0.05, cleanup="gated")
    Xg = net.grid.sample_gaps(2000, np.random.default_rng(2))
    rms = lambda n: np.sqrt(np.mean(n.forward(Xg) ** 2))
    assert rms(net) < rms(gated)


def test_piecewise_reference_has_no_cube_error(net):
    ref = lambda x: flatten(net.plan, net.table(reshape(net.plan, x)))
    est = estimate_l2_error(net, ref, n_samples=20_000, seed=0)
    assert est.err_cubes <= 1e-8


def test_error_estimate_and_bounds():
    f = get_target("bump", 0.5, 1.0, 2)
    n = build_approximator(f, eps=0.7, d=1, L=2)
    est = estimate_l2_error(n, f, 20_000, seed=3)
    assert est.ci_total[0] <= est.err_total <= est.ci_total[1]
    assert est.err_cubes <= est.cell_bound
    assert est.ci_total[1] < 0.7
    again = estimate_l2_error(n, f, 20_000, seed=3)
    assert again.err_total == est.err_total


def test_constant_error_limited_by_gap_measure():
    f = get_target("constant:0.5", 0.5, 1.0, 2)
    n = build_approximator(f, d=1, L=2, delta=0.2, delta_star=0.05)
    est = estimate_l2_error(n, f, 20_000, seed=0)
    gap = 1 - est.cube_measure
    assert est.err_cubes <= 1e-9
    # only the gap region contributes
    assert est.err_total == pytest.approx(np.sqrt(gap) * est.err_gaps, rel=1e-9)


def test_argument_validation():
    f = get_target("bump", 0.5, 1.0, 2)
    with pytest.raises(ValueError):
        build_approximator(f, eps=0.7, delta=0.2, delta_star=0.05)
    with pytest.raises(ValueError):
        build_approximator(f)
    with pytest.raises(BuildError) as err:
        build_approximator(f, eps=50.0)
    assert err.value.stage == "select"


def test_widen_identity_and_agreement(net):
    X, _ = net.grid.sample_cubes(100, np.random.default_rng(4))
    ref = net.forward(X)
    np.testing.assert_array_equal(widen(net, 1).forward(X), ref)
    for n in (2, 4):
        w = widen(net, n)
        np.testing.assert_allclose(w.forward(X), ref, atol=1e-9)
        assert 1.0 <= w.summary()["ratio"] <= 2.0


def test_widen_target_depth(net):
    w = widen(net, target_depth=20)
    assert w.D <= 20
    with pytest.raises(ValueError):
        widen(net, target_depth=5)


def test_with_table_rebuilds_value_only(net):
    vals = np.arange(net.grid.n_points, dtype=float) / net.grid.n_points
    tab = PiecewiseConstantFn(net.grid, embed_output(net.plan, vals[:, None]), "custom")
    other = net.with_table(tab, d_y=1)
    assert other.context is net.context
    np.testing.assert_allclose(other(flatten(net.plan, net.grid.points()))[:, 0], vals, atol=1e-9)


def test_rate_sweep_slope():
    r = rate_sweep((0.7, 0.5, 0.35, 0.25))
    assert abs(r["slope"] - 4) / 4 < 0.15
    assert [row["M"] for row in r["rows"]] == sorted(row["M"] for row in r["rows"])
