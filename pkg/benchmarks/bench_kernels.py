"""Compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat R]

Each kernel runs on inputs shaped like one trial at N = 16, N_RF = 4. The
table lists the best time per call and the largest output difference
between the two backends.
"""

import argparse
import timeit

import numpy as np

from shortlink import _kernels_py
from shortlink.acquisition import draw_schedule
from shortlink.geo_mp import AngularGrid, build_chain_tables, geometry_map
from shortlink.geometry import aoa_offsets, build_ap_layout

try:
    from shortlink import _kernels
except ImportError:
    _kernels = None


def _cases(rng):
    n, B, M = 16, 16, 16
    NN = n * n
    sched = [draw_schedule(M, n, 4, rng) for _ in range(B // 4)]
    rows = np.concatenate([s.r for s in sched])
    cols = np.repeat(np.stack([s.c for s in sched]), 4, axis=0)
    y = (rng.standard_normal((B, M)) + 1j * rng.standard_normal((B, M))) * 0.3
    pi_in = np.full((B, NN), 0.05)
    xi = np.zeros((B, NN), complex)
    psi = np.full((B, NN), 2.0)
    x0 = pi_in * xi
    v0 = pi_in * psi
    amp_args = (y, rows, cols, n, pi_in, xi, psi, np.full(B, 0.01), x0, v0,
                np.zeros((B, M), complex), 25, 1e-6, 1.0)

    r = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
    den_args = (r, 0.1, 0.05, 0.0, 1.0)

    grid = AngularGrid.from_resolution(1 / 180)
    tables = build_chain_tables(grid, aoa_offsets(build_ap_layout(16, 4, 0.005, 0.20)),
                                0.3, 1.3, 2000)
    ll = rng.standard_normal((4, grid.size)) * 5
    fb_args = (ll, tables.forward, tables.backward)

    d = 0.3 + (np.arange(2000) + 0.5) / 2000
    mapped = geometry_map(grid.angles[:, None], d[None, :], 0.08, 0.03)
    valid = np.isfinite(mapped)
    bin_args = (np.where(valid, mapped, 0.0), valid, float(grid.angles[0]), grid.step,
                grid.size)
    return {
        "amp_solve": amp_args,
        "bg_denoise": den_args,
        "forward_backward": fb_args,
        "gmp_beliefs": fb_args,
        "bin_pushforward": bin_args,
    }


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(u, v) for u, v in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind in "biu":
        return float(np.max(np.abs(a.astype(float) - b.astype(float)), initial=0.0))
    fin = np.isfinite(a) & np.isfinite(b)
    return float(np.max(np.abs(a[fin] - b[fin]), initial=0.0))


def best_time(fn, args, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-6)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")
        return 1
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<18}{'python [ms]':>13}{'cython [ms]':>13}{'speedup':>9}{'max diff':>11}")
    for name, call_args in cases.items():
        py, cy = getattr(_kernels_py, name), getattr(_kernels, name)
        t_py = best_time(py, call_args, args.repeat)
        t_cy = best_time(cy, call_args, args.repeat)
        diff = _max_diff(py(*call_args), cy(*call_args))
        print(f"{name:<18}{t_py * 1e3:>13.3f}{t_cy * 1e3:>13.3f}{t_py / t_cy:>9.1f}"
              f"{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
