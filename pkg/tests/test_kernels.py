import os
import subprocess
import sys

import numpy as np
import pytest

from holder_transformer import kernels
from holder_transformer.network import build_approximator
from holder_transformer.reshape import get_target


@pytest.fixture(scope="module")
def setup():
    net = build_approximator(get_target("coord_bump", 0.5, 1.0, 2), eps=0.7, d=1, L=2)
    X, _ = net.grid.sample_cubes(500, np.random.default_rng(0))
    return net, X + net.positional_encoding[None]


def test_stack_backends_agree(setup):
    net, X = setup
    q = net.quantizer.packed()
    a = kernels.run_stack(q, X, kernels.python_backend())
    b = kernels.run_stack(q, X)
    assert np.array_equal(a, b)


def test_attention_backends_agree(setup):
    net, X = setup
    Z = kernels.run_stack(net.quantizer.packed(), X)
    W = [np.ascontiguousarray(m, dtype=np.float64) for m in net.context.head_float()]
    a = kernels.attention_batch(Z, *W, impl=kernels.python_backend())
    b = kernels.attention_batch(Z, *W)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_empty_stack_is_identity(setup):
    _, X = setup
    empty = kernels.pack_layers([], X.shape[1])
    assert np.array_equal(kernels.run_stack(empty, X), X)


def test_pure_env_forces_fallback():
    env = dict(os.environ, HOLDER_TRANSFORMER_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from holder_transformer import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True).stdout.strip()
    from holder_transformer import _kernels_py
    assert out == _kernels_py.BACKEND


def test_run_stack_leaves_input_untouched(setup):
    net, X = setup
    before = X.copy()
    kernels.run_stack(net.quantizer.packed(), X)
    assert np.array_equal(X, before)
