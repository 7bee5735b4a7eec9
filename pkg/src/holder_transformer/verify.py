"""Invariant checks shared by the CLI and the acceptance suite.

Each check returns a dict with an ``ok`` flag and the measured quantities.
"""

from __future__ import annotations

import math

import numpy as np

from .grid import GridSpec
from .network import TransformerNetwork
from .precision import to_float
from .quantize import QuantizeModule, quantize_forward
from .value import value_forward

__all__ = ["check_quantization", "check_context", "check_value", "check_network"]


def check_quantization(module: QuantizeModule, n_per_cube: int = 1000, n_gap: int = 10_000,
                       seed: int = 0, tol: float = 1e-10) -> dict:
    """Cube samples map to ``G + E``; gap samples stay in ``[1, L + 1]``."""
    grid: GridSpec = module.grid
    rng_c, rng_g = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    GE = grid.positional_points()
    worst = 0.0
    for cube in range(grid.n_points):
        X, _ = grid.sample_cubes(n_per_cube, rng_c, cube)
        worst = max(worst, float(np.abs(quantize_forward(module, X) - GE[cube]).max()))
    Z = quantize_forward(module, grid.sample_gaps(n_gap, rng_g))
    lo, hi = float(Z.min()), float(Z.max())
    gap_ok = lo >= 1 - tol and hi <= grid.L + 1 + tol
    return {"ok": bool(worst <= tol and gap_ok), "max_cube_error": worst, "tol": tol,
            "gap_range": [lo, hi], "gap_ok": bool(gap_ok), "n_per_cube": n_per_cube}


def check_context(net: TransformerNetwork, log_tol: float = 1e-9) -> dict:
    c = net.cert
    # gamma_emp is the smallest pairwise ID distance in working precision
    gamma_pos = c.gamma_emp is not None and c.gamma_emp > 0
    rel = abs(c.log_gamma_theory - c.log_gamma_closed_form) / abs(c.log_gamma_closed_form)
    checks = {
        "gamma_positive": bool(gamma_pos),
        "n_ids": bool(c.n_ids == net.L * net.grid.n_points),
        "norm_bound": bool(c.max_norm <= c.r * (1 + 1e-12)),
        "token_separation": bool(c.min_token_separation >= c.beta / 2 * (1 - 1e-12)),
        "closed_form": bool(rel <= log_tol),
    }
    return {"ok": all(checks.values()), "checks": checks, "n_ids": c.n_ids,
            "gamma_emp": float(c.gamma_emp), "log_gamma_emp": c.log_gamma_emp,
            "log_gamma_theory": c.log_gamma_theory, "log_gamma_closed_form": c.log_gamma_closed_form,
            "log_rel_diff": rel, "max_norm": c.max_norm, "r": c.r,
            "min_token_separation": c.min_token_separation, "beta": c.beta,
            "precision_bits": c.precision_bits, "scale_mode": c.scale_mode}


def check_value(net: TransformerNetwork, tol: float = 1e-8) -> dict:
    """Value stack applied to the certified IDs reproduces ``Y_G``."""
    out = to_float(value_forward(net.value, net.cert.ids))
    err = float(np.abs(out - net.table.table).max())
    return {"ok": bool(err <= tol), "max_error": err, "tol": tol,
            "n_layers": len(net.value.layers), "value_bits": net.value.precision.bits}


def check_network(net: TransformerNetwork, n_per_cube: int = 1000, seed: int = 0) -> dict:
    res = {
        "quantization": check_quantization(net.quantizer, n_per_cube, seed=seed),
        "contextual": check_context(net),
        "value": check_value(net),
    }
    G = net.grid.points()
    end = float(np.abs(to_float(net.forward(G)) - net.table.table).max())
    res["end_to_end"] = {"ok": bool(end <= 1e-8 and math.isfinite(end)), "max_error": end}
    return res
