"""Time the compiled kernels against the numpy backend.

Two kernels: brute-force set energies on tiny instances, and the inverse block
on a ring of cells of a grid Laplacian (the exact single-flip search).

    python benchmarks/bench_kernels.py [--instances 20] [--repeat 3] [--grid 255]
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from dropletmm import instances
from dropletmm.kernels import get_backend
from dropletmm.oracles import reduced_problem


def _problems(n):
    out = []
    for i in range(n):
        ins = instances.tiny_instance(7, i)
        out.append(reduced_problem(ins.domain, ins.mask0, ins.amplitude, ins.params)[1:])
    return out


def _time(mod, problems, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = [mod.brute_force_energies(*p) for p in problems]
        best = min(best, time.perf_counter() - t0)
    return best, res


def _ring_problem(m):
    T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m))
    A = (sp.kron(T, sp.eye(m)) + sp.kron(sp.eye(m), T)).tocsc()
    fac = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True})
    X, Y = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    c = (m - 1) / 2
    R = np.hypot(X - c, Y - c)
    return fac, np.flatnonzero((R >= c - 8) & (R < c - 7))


def _bench_green(m, repeat):
    fac, ring = _ring_problem(m)
    rows = {}
    for name in ("python", "compiled"):
        try:
            mod = get_backend(name)
        except ImportError:
            print(f"{name:9s} unavailable")
            continue
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            G = mod.green_block(fac, ring)
            best = min(best, time.perf_counter() - t0)
        rows[name] = (best, G)
        print(f"{name:9s} {best:8.3f} s  green block {len(ring)} cells, {m * m} unknowns")
    if len(rows) == 2:
        diff = np.abs(rows["python"][1] - rows["compiled"][1]).max()
        print(f"speedup   {rows['python'][0] / rows['compiled'][0]:8.1f}x  max |dG| {diff:.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--grid", type=int, default=255)
    args = ap.parse_args()
    problems = _problems(args.instances)
    masks = sum(2 ** len(p[0]) for p in problems)
    rows = {}
    for name in ("python", "compiled"):
        try:
            mod = get_backend(name)
        except ImportError:
            print(f"{name:9s} unavailable")
            continue
        rows[name] = _time(mod, problems, args.repeat)
        t = rows[name][0]
        print(f"{name:9s} {t:8.3f} s  {masks / t:12.0f} masks/s")
    if len(rows) == 2:
        diff = max(np.nanmax(np.abs(a - b)) for a, b in zip(rows["python"][1], rows["compiled"][1]))
        print(f"speedup   {rows['python'][0] / rows['compiled'][0]:8.1f}x  max |dE| {diff:.2e}")
    _bench_green(args.grid, args.repeat)


if __name__ == "__main__":
    main()
