"""Time the compiled and numpy backends on the hot loops.

Usage: python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from nnlif.equilibria import ModelParams, find_equilibria
from nnlif.grid import Grid
from nnlif.kernels import get_backend


def _best(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    params = ModelParams(-3.0)
    N_inf = find_equilibria(params)[0].N_inf
    grid = Grid.for_model(params, N_inf, dv=2e-3)
    v = grid.v
    i_R = grid.i_R
    u0 = np.exp(-((v - 0.0) ** 2) / 0.5)
    u0[-1] = 0.0
    u0 /= grid.mass(u0)
    dt = 2e-3
    n = 2000
    D = 250
    samples = np.exp(-np.arange(20000) * 1e-3)
    xi = np.linspace(0.0, 4.0, 400) * 1j + 0.1
    yield "run_fixed_drift", lambda k: k.run_fixed_drift(u0, v, -3.0 * N_inf, dt, n, i_R)
    yield "run_nonlinear", lambda k: k.run_nonlinear(u0, v, -3.0, dt, n, i_R, D,
                                                    np.full(D, N_inf))
    yield "laplace_cells", lambda k: k.laplace_cells(samples, 1e-3, xi)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = {"python": get_backend("python")}
    try:
        backends["cython"] = get_backend("cython")
    except ImportError:
        print("compiled extension not built; timing python backend only")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases():
        times = {}
        outs = {}
        for b, mod in backends.items():
            times[b], outs[b] = _best(lambda: fn(mod), args.repeat)
        line = f"{name:<18}" + "".join(f"{times[b]:>11.4f}s" for b in backends)
        if "cython" in times:
            line += f"{times['python'] / times['cython']:>9.1f}x"
            a, c = outs["python"], outs["cython"]
            a = a if isinstance(a, tuple) else (a,)
            c = c if isinstance(c, tuple) else (c,)
            diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y))))
                       for x, y in zip(a, c) if np.ndim(x) > 0)
            line += f"   max|diff| {diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
