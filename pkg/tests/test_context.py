import math

import numpy as np
import pytest

from holder_transformer.context import (ContextualCollision, PrecisionError, boltz,
                                        build_context_layer, contextual_forward,
                                        log_gamma_closed_form, theory_constants,
                                        verify_contextual_ids)
from holder_transformer.grid import build_grid
from holder_transformer.precision import extended, to_float


@pytest.fixture(scope="module")
def grid():
    return build_grid(0.4, 0.1, 1, 2)


@pytest.fixture(scope="module")
def paper(grid):
    w, c = build_context_layer(grid, seed=0, scale="paper")
    return w, verify_contextual_ids(w, grid, c)


@pytest.fixture(scope="module")
def tempered(grid):
    w, c = build_context_layer(grid, seed=0, scale="tempered")
    return w, verify_contextual_ids(w, grid, c)


def test_theory_constants(grid):
    t = theory_constants(grid)
    assert t["r"] == pytest.approx(3.125)
    assert t["V"] == 8
    assert t["delta0"] == pytest.approx(2 * math.log(2) + 3)
    assert t["kappa"] == pytest.approx(9 ** 4 * (2 * math.log(2) + 3) * 9 / 0.5, rel=1e-12)
    assert t["kappa"] == pytest.approx(5.18e5, rel=1e-3)


def test_log_gamma_matches_closed_form(grid, paper):
    _, c = paper
    assert abs(c.log_gamma_theory - log_gamma_closed_form(grid)) <= 1e-9 * abs(c.log_gamma_theory)


def test_paper_scale_ids_distinct(paper):
    _, c = paper
    assert c.n_ids == 8
    assert c.gamma_emp > 0
    assert c.precision_bits > 1e5
    assert math.isfinite(c.log_gamma_emp) and c.log_gamma_emp < -1e4
    # the empirical separation exceeds the theoretical lower bound
    assert c.log_gamma_emp >= c.log_gamma_theory


@pytest.mark.parametrize("which", ["paper", "tempered"])
def test_norm_and_token_bounds(which, request):
    _, c = request.getfixturevalue(which)
    assert c.max_head_norm <= c.beta / 4 * (1 + 1e-12)
    assert c.r_min - c.beta / 4 <= c.min_norm and c.max_norm <= c.r * (1 + 1e-12)
    assert c.min_token_separation >= c.beta / 2


def test_paper_scale_needs_extended(grid, paper):
    w, _ = paper
    from dataclasses import replace
    from holder_transformer.precision import DOUBLE
    X = grid.positional_points()
    with pytest.raises(PrecisionError):
        contextual_forward(replace(w, precision=DOUBLE), X, DOUBLE)


def test_shared_token_sequences_get_distinct_ids(tempered, grid):
    w, _ = tempered
    # both sequences share the token 1 (first column) but differ in the second
    A = np.array([[[1.0, 2.0]], [[1.0, 2.5]]])
    out = contextual_forward(w, A)
    assert abs(out[0, 0, 0] - out[1, 0, 0]) > 0


def test_zero_weights_identity(tempered, grid):
    from dataclasses import replace
    w, _ = tempered
    z = replace(w, W_O=np.zeros_like(w.W_O))
    X = grid.positional_points()
    np.testing.assert_array_equal(contextual_forward(z, X), X)


def test_boltz():
    assert float(boltz([0.0, 0.0])) == 0.0
    assert float(boltz([math.log(2), 0.0])) == pytest.approx(math.log(2) * 2 / 3)
    assert float(boltz([1.7, 1.7, 1.7])) == pytest.approx(1.7)
    assert float(to_float(boltz([math.log(2), 0.0], extended(128)))) == pytest.approx(math.log(2) * 2 / 3)


@pytest.mark.parametrize("d,L,delta,ds", [(2, 2, 0.4, 0.1), (1, 3, 0.2, 0.05)])
def test_tempered_separation(d, L, delta, ds):
    g = build_grid(delta, ds, d, L)
    w, c = build_context_layer(g, seed=0, scale="tempered")
    c = verify_contextual_ids(w, g, c)
    assert c.gamma_emp > 1e-6
    assert c.n_ids == L * g.n_points


def test_collision_reported(grid):
    from dataclasses import replace
    w, c = build_context_layer(grid, seed=0, scale="tempered")
    # without the attention update IDs are the raw tokens, which repeat across sequences
    w = replace(w, W_O=np.zeros_like(w.W_O))
    with pytest.raises(ContextualCollision):
        verify_contextual_ids(w, grid, c)
