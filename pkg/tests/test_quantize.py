import numpy as np
import pytest

from holder_transformer.grid import build_grid
from holder_transformer.quantize import build_quantizer, quantize_forward, ramp
from holder_transformer.seq import ff_forward
from holder_transformer.verify import check_quantization


@pytest.fixture
def layer():
    g = build_grid(0.2, 0.1, 1, 2)
    q = build_quantizer(g)
    return q.layers[q.labels.index((1, 1, 2))]  # j=1, k=1 -> offset 1.3


def test_ramp_snaps_inside_cube(layer):
    assert ff_forward(layer, np.array([[1.35]]))[0, 0] == pytest.approx(1.30)
    assert ff_forward(layer, np.array([[1.3]]))[0, 0] == pytest.approx(1.3)


def test_ramp_beyond_gap_unchanged(layer):
    assert ff_forward(layer, np.array([[1.65]]))[0, 0] == pytest.approx(1.65)


def test_ramp_in_gap_interpolates(layer):
    # t = 0.25 sits inside the gap [0.2, 0.3]: linear between 1.3 and 1.6
    assert ff_forward(layer, np.array([[1.55]]))[0, 0] == pytest.approx(1.45)
    assert ramp(0.25, 0.2, 0.1) == pytest.approx(-0.1)


def test_grid_points_are_fixed():
    g = build_grid(0.2, 0.1, 2, 2)
    q = build_quantizer(g)
    G = g.points()
    np.testing.assert_allclose(quantize_forward(q, G), G + g.positional_encoding, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_cube_samples(d):
    r = check_quantization(build_quantizer(build_grid(0.4, 0.1, d, 2)), n_per_cube=1000)
    assert r["ok"], r


def test_merged_width_matches():
    g = build_grid(0.2, 0.1, 1, 2)
    X, _ = g.sample_cubes(50, np.random.default_rng(0))
    a = quantize_forward(build_quantizer(g), X)
    b = quantize_forward(build_quantizer(g, merge_width=True), X)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_domain_check():
    q = build_quantizer(build_grid(0.2, 0.1, 1, 2))
    with pytest.raises(ValueError):
        quantize_forward(q, np.array([[1.5, 0.0]]))
