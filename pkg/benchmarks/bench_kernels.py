"""Compare the compiled and numpy kernel backends on real network stacks.

    python3 benchmarks/bench_kernels.py [--n 10000] [--repeat 3]

Prints one line per (kernel, backend) with the best wall time and the
maximum absolute difference between backends.
"""

import argparse
import time

import numpy as np

from holder_transformer import kernels
from holder_transformer.network import build_approximator
from holder_transformer.reshape import get_target


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000, help="sequences per batch")
    ap.add_argument("--eps", type=float, default=0.7)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    net = build_approximator(get_target("coord_bump", 0.5, 1.0, 2), eps=args.eps, d=1, L=2)
    rng = np.random.default_rng(args.seed)
    X, _ = net.grid.sample_cubes(args.n, rng)
    w = net.context
    Xq = net.quantizer.packed()
    Xv = net.value.packed()
    Zq = kernels.run_stack(Xq, X + net.positional_encoding[None])
    Wk, Wq, Wv, Wo = (np.ascontiguousarray(m, dtype=np.float64) for m in w.head_float())

    py = kernels.python_backend()
    cases = {
        "quantizer": lambda impl: kernels.run_stack(Xq, X + net.positional_encoding[None], impl),
        "attention": lambda impl: kernels.attention_batch(Zq, Wk, Wq, Wv, Wo, impl),
        "value": lambda impl: kernels.run_stack(Xv, Zq, impl),
    }
    print(f"compiled backend: {kernels.BACKEND}; M={net.grid.M} D={net.D} n={args.n}")
    print(f"{'kernel':<10} {'layers':>6} {'numpy s':>9} {'compiled s':>11} {'speedup':>8} {'max diff':>10}")
    for name, fn in cases.items():
        layers = {"quantizer": Xq.n_layers, "attention": 1, "value": Xv.n_layers}[name]
        t_py, out_py = best_of(lambda: fn(py), args.repeat)
        t_c, out_c = best_of(lambda: fn(None), args.repeat)
        diff = float(np.abs(out_py - out_c).max())
        print(f"{name:<10} {layers:>6} {t_py:>9.4f} {t_c:>11.4f} {t_py / t_c:>8.2f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
