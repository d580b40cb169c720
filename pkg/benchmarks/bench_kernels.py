"""Compiled vs pure-numpy kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Times the shifted-SABR normal-vol expansion (with forward slope) on a
calibration-sized batch and the Euler path kernel on a hedging-sized block,
checks that both backends agree, and prints the speed-up.
"""
import argparse
import time

import numpy as np

from volgibbs import kernels
from volgibbs.sabr import ATM_EPS


def vol_inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.004, 0.05, n)
    nu = rng.uniform(0.1, 2.0, n)
    rho = rng.uniform(-0.8, 0.8, n)
    F = rng.uniform(-0.005, 0.03, n)
    K = F + rng.choice([-0.02, -0.01, -0.005, 0.0, 0.005, 0.01, 0.02], n)
    T = rng.uniform(0.1, 10.0, n)
    return alpha, np.full(n, 0.5), nu, rho, np.full(n, 0.04), F, K, T


def path_inputs(n_paths, n_steps, n_nodes, seed=0):
    rng = np.random.default_rng(seed)
    F0 = np.full(n_nodes, 0.01)
    alpha = rng.uniform(0.005, 0.02, n_nodes)
    nu = rng.uniform(0.2, 1.2, n_nodes)
    rho = rng.uniform(-0.5, 0.7, n_nodes)
    active = np.full(n_nodes, n_steps, dtype=np.int64)
    z1 = rng.standard_normal((n_paths, n_steps))
    z2 = rng.standard_normal((n_paths, n_steps))
    record = np.arange(0, n_steps + 1, 24, dtype=np.int64)
    return (F0, alpha, nu, rho, 0.5, 0.04, 1e-6, 1.0 / 8640, active, z1, z2, record, 0)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n-vols", type=int, default=200_000)
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--steps", type=int, default=2160)
    ap.add_argument("--nodes", type=int, default=48)
    args = ap.parse_args(argv)

    py = kernels.get_backend("python")
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1

    vi = vol_inputs(args.n_vols)
    t_py, (s_py, d_py, _) = best_of(lambda: py.normal_vol(*vi, ATM_EPS, True), args.repeat)
    t_cy, (s_cy, d_cy, _) = best_of(lambda: cy.normal_vol(*vi, ATM_EPS, True), args.repeat)
    err = max(np.max(np.abs(s_py - s_cy) / s_py), np.max(np.abs(d_py - d_cy) / (np.abs(d_py) + 1e-12)))
    print(f"normal_vol  n={args.n_vols:>8d}  python {t_py * 1e3:8.2f} ms  cython {t_cy * 1e3:8.2f} ms  "
          f"speed-up {t_py / t_cy:6.1f}x  max rel diff {err:.1e}")

    pi = path_inputs(args.paths, args.steps, args.nodes)
    t_py, (r_py, _) = best_of(lambda: py.sabr_paths(*pi), max(1, args.repeat // 2))
    t_cy, (r_cy, _) = best_of(lambda: cy.sabr_paths(*pi), max(1, args.repeat // 2))
    err = np.max(np.abs(r_py - r_cy))
    print(f"sabr_paths  {args.paths}x{args.steps}x{args.nodes}  python {t_py * 1e3:8.2f} ms  "
          f"cython {t_cy * 1e3:8.2f} ms  speed-up {t_py / t_cy:6.1f}x  max abs diff {err:.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
