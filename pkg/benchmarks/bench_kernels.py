"""Compare the compiled kernels with the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat R]``.  Prints one
row per kernel with the best wall time of each backend and the speedup,
and checks that both backends agree.
"""

import argparse
import time

import numpy as np

from pmpkit import kernels
from pmpkit.expr import compile_program, parse_expression


def _program(texts, n, m):
    return compile_program([parse_expression(s, n=n, m=m) for s in texts], n=n, m=m)


def _best(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    rng = np.random.default_rng(0)
    f = _program(["q2", "-sin(q1) - 0.1*q2 + u1", "0.5*(q1^2 + u1^2)"], 3, 1)
    X = rng.uniform(-1.0, 1.0, size=(20000, 1 + 3 + 1))
    N = 2000
    nodes = np.linspace(0.0, 1.0, N + 1)
    ucells = np.cos(3.0 * nodes[:-1])[:, None]
    A = rng.normal(size=(N, 4, 4)) * 0.5
    return [
        ("eval_program 20k x 3", lambda k: k.eval_program(f, X)),
        ("eval_program_grad 20k x 3", lambda k: k.eval_program_grad(f, X)[1]),
        ("rk4_forward N=2000", lambda k: k.rk4_forward(f, np.array([0.5, 0.0, 0.0]), nodes, ucells, 1e8)),
        ("rk4_matrix N=2000 n=4", lambda k: k.rk4_matrix(A, A, A, nodes)[0]),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled extension not built; timing the python backend only")
    print(f"{'kernel':<28} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8}")
    for name, run in cases():
        t_py, ref = _best(lambda: run(impls["python"]), args.repeat)
        if "compiled" in impls:
            t_c, out = _best(lambda: run(impls["compiled"]), args.repeat)
            assert np.allclose(out, ref, rtol=1e-12, atol=1e-12), name
            print(f"{name:<28} {t_py:>11.4f} {t_c:>13.4f} {t_py / t_c:>7.1f}x")
        else:
            print(f"{name:<28} {t_py:>11.4f} {'-':>13} {'-':>8}")


if __name__ == "__main__":
    main()
