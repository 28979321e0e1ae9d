"""Compare the numba and numpy kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 201] [--steps 2000]

Each kernel is called once per backend before timing (numba compiles on
first call).  The table reports the best wall time over ``--repeat`` runs,
the speedup and the largest difference between the two outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from heatlab import kernels
from heatlab.grid import ControlWindow, build_grid
from heatlab.nonlinearity import NonlinearitySpec


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out if np.ndim(o) > 0])
    return np.ravel(np.asarray(out, dtype=float))


def cases(n, steps):
    g = build_grid(0.0, 1.0, n, "neumann")
    w = ControlWindow(g, (0.3, 0.7))
    rng = np.random.default_rng(0)
    tau, theta = 1.0 / steps, 1.0
    a = np.full((steps + 1, n), -4.0)
    src = rng.standard_normal((steps, n)) * w.indicator
    y0 = rng.standard_normal(n)
    basis = np.eye(n)[:, :: max(1, n // 40)]
    spec = NonlinearitySpec("odd_log", 1, 1.8, 2.0)
    fam = spec.kernel_args
    bands = g.laplacian_bands
    lo, di, up = (np.asarray(b, dtype=float) for b in bands)
    shifted = (-tau * lo, 1.0 - tau * di, -tau * up)  # I - tau L, nonsingular
    out = {
        "tridiag_solve": lambda: kernels.tridiag_solve(*shifted, y0),
        "forward_march": lambda: kernels.forward_march(bands, g.mask, a, src, y0, tau, theta),
        "adjoint_march": lambda: kernels.adjoint_march(bands, g.mask, a, y0, tau, theta),
        "adjoint_gram": lambda: kernels.adjoint_gram(bands, g.mask, a, basis, w.weights, tau, theta)[1],
    }
    ctrl = np.zeros((steps, n))
    out["semilinear_march"] = lambda: kernels.semilinear_march(
        bands, g.mask, fam, 5.0 * y0, ctrl, 1e-4, 1e250)[0]
    m = basis.shape[1]
    H = rng.standard_normal((m, m))
    H = H @ H.T / m
    Y = rng.standard_normal(m)
    step = 1.0 / np.linalg.eigvalsh(H)[-1]
    out["prox_grad"] = lambda: kernels.prox_grad(H, Y, False, Y, 1e-2, True, np.zeros(m),
                                                 step, 1e-14, 2000)[0]
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--n", type=int, default=201)
    p.add_argument("--steps", type=int, default=2000)
    args = p.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba is not importable; only the numpy backend can run")
        return 1
    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases(args.n, args.steps).items():
        res = {}
        for be in ("numba", "numpy"):
            with kernels.backend(be):
                fn()  # warm-up / compile
                res[be] = _best(fn, args.repeat)
        (tn, on), (tp, op) = res["numba"], res["numpy"]
        a, b = _flat(on), _flat(op)
        diff = float(np.max(np.abs(a - b))) if a.size and a.shape == b.shape else float("nan")
        print(f"{name:<18}{tn:>12.4g}{tp:>12.4g}{tp / tn:>10.1f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
