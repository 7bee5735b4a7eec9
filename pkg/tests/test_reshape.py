import numpy as np
import pytest

from holder_transformer.reshape import (ReshapePlan, flatten, get_target, holder_catalog,
                                        holder_violations, reshape)
from holder_transformer.seq import ShapeError


def test_reshape_column_major():
    plan = ReshapePlan(2, 2)
    np.testing.assert_array_equal(reshape(plan, [1, 2, 3, 4]), [[1, 3], [2, 4]])
    assert plan.index(3) == (1, 2)
    np.testing.assert_array_equal(flatten(plan, [[1, 3], [2, 4]]), [1, 2, 3, 4])


def test_trivial_plan():
    plan = ReshapePlan(1, 1)
    np.testing.assert_array_equal(reshape(plan, [7.0]), [[7.0]])
    np.testing.assert_array_equal(flatten(plan, [[7.0]]), [7.0])


def test_round_trip_random():
    rng = np.random.default_rng(0)
    plan = ReshapePlan(3, 4)
    x = rng.random((100, 12))
    np.testing.assert_array_equal(flatten(plan, reshape(plan, x)), x)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        reshape(ReshapePlan(2, 2), [1, 2, 3])


@pytest.mark.parametrize("target", holder_catalog(0.5, 1.0, 2), ids=lambda t: t.catalog_id)
def test_catalog_is_holder(target):
    assert holder_violations(target, 100_000, seed=1) == 0


def test_lipschitz_bump():
    assert holder_violations(get_target("bump", 1.0, 1.0, 1), 20_000) == 0


def test_violation_detected():
    bad = get_target("bump", 0.5, 1.0, 2)
    # claim alpha = 1 for a square-root cusp: must be caught near x_1 = 1/2
    from dataclasses import replace
    assert holder_violations(replace(bad, alpha=1.0), 20_000) > 0


def test_unknown_target():
    with pytest.raises(KeyError):
        get_target("nope")
