import numpy as np
import pytest

from holder_transformer.shatter import (build_shatter_family, family_holder_violations,
                                        lower_bound_M, verify_shattering)


def test_peak_value():
    fam = build_shatter_family(2, 2, 1.0)
    assert fam.side == 0.5
    assert fam.peak == pytest.approx(0.125)
    assert fam.zeta(fam.centers[0], 0)[0] == pytest.approx(0.125)


def test_boundary_and_midpoint():
    fam = build_shatter_family(2, 2, 0.5)
    c = fam.centers[0]
    assert fam.zeta(np.array([0.5, 0.25]), 0)[0] == 0.0
    assert fam.zeta(np.array([0.0, 0.1]), 0)[0] == 0.0
    mid = c + 0.5 * (np.array([0.5, 0.4]) - c)
    edge = c + (np.array([0.5, 0.4]) - c)
    assert fam.zeta(edge, 0)[0] == pytest.approx(0.0, abs=1e-15)
    assert fam.zeta(mid, 0)[0] == pytest.approx(fam.peak / 2)


def test_all_positive_pattern():
    fam = build_shatter_family(2, 2, 0.5)
    vals = fam.evaluate(np.ones(4), fam.centers)
    assert np.all(vals > 0)


def test_every_pattern_realized():
    fam = build_shatter_family(2, 2, 0.5)
    seen = {tuple(np.sign(fam.evaluate(phi, fam.centers))) for phi in fam.patterns()}
    assert len(seen) == 16


def test_lower_bound_M():
    assert lower_bound_M(0.1, 0.5) == int((0.45) ** -2)
    assert lower_bound_M(0.01, 1.0) == 22


def test_networks_match_signs():
    rep = verify_shattering(build_shatter_family(2, 2, 0.5), d=1)
    assert rep.family_ok and rep.network_ok
    assert rep.shattered == 4
    assert all(r["max_abs_diff"] < 1e-8 for r in rep.patterns)


def test_network_failure_is_named():
    fam = build_shatter_family(2, 2, 0.5)
    rep = verify_shattering(fam, net_builder=lambda phi: (lambda x: -fam.evaluate(phi, x)[:, None]))
    assert not rep.network_ok
    assert rep.failures and {"phi", "theta", "stage"} <= set(rep.failures[0])


def test_size_cap():
    with pytest.raises(ValueError):
        verify_shattering(build_shatter_family(3, 2, 0.5))


@pytest.mark.parametrize("alpha", [0.3, 0.5, 1.0])
def test_holder_membership(alpha):
    fam = build_shatter_family(2, 2, alpha)
    v = family_holder_violations(fam, 20_000, patterns=[np.ones(4), np.array([1, -1, -1, 1.0])])
    assert sum(v.values()) == 0
