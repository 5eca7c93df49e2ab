"""Compare the compiled and numpy kernel backends on the two hot loops.

    python3 benchmarks/bench_kernels.py --points 150000 --queries 8000
"""

import argparse
import time

import numpy as np

from labelprop import kernels
from labelprop.cloud import VoxelGrid


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def street_like(rng, n):
    """Points concentrated near a ground plane, roughly like a lidar map."""
    xy = rng.uniform(-40, 40, (n, 2))
    z = np.where(rng.random(n) < 0.6, rng.normal(0, 0.05, n), rng.uniform(0, 6, n))
    return np.column_stack([xy, z])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=150_000)
    parser.add_argument("--queries", type=int, default=8_000)
    parser.add_argument("--voxel-size", type=float, default=0.05)
    parser.add_argument("--radius", type=float, default=0.3)
    parser.add_argument("--classes", type=int, default=19)
    parser.add_argument("--dynamic", type=int, default=8)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    pts = street_like(rng, args.points)
    queries = pts[rng.integers(0, len(pts), args.queries)] + rng.normal(0, 0.05, (args.queries, 3))
    labels = rng.integers(-1, args.classes, len(pts)).astype(np.int32)
    conf = np.where(labels >= 0, rng.random(len(pts)), 0.0)
    grid = VoxelGrid(pts, args.voxel_size)
    gargs = (grid.sorted_points, grid.sorted_lin, grid.kmin, grid.dims, grid.voxel_size)
    sl, sc = labels[grid.order], conf[grid.order]

    rows = {}
    for backend in kernels.available():
        rq = best_of(lambda: kernels.radius_query(*gargs, queries, args.radius, backend=backend), args.repeat)
        pr = best_of(lambda: kernels.propagate(*gargs, sl, sc, queries, args.radius, 0.5,
                                               args.classes, args.dynamic, backend=backend), args.repeat)
        rows[backend] = (rq, pr)

    print(f"{args.points} points, {args.queries} queries, r={args.radius}, best of {args.repeat}")
    print(f"{'backend':<10}{'radius_query ms':>18}{'propagate ms':>15}")
    for backend, (rq, pr) in rows.items():
        print(f"{backend:<10}{1000 * rq:>18.1f}{1000 * pr:>15.1f}")
    if len(rows) == 2:
        (prq, ppr), (crq, cpr) = rows["python"], rows["compiled"]
        print(f"{'speedup':<10}{prq / crq:>17.1f}x{ppr / cpr:>14.1f}x")


if __name__ == "__main__":
    main()
