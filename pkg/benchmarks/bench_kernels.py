"""Compiled vs numpy orbit kernels.

    python3 benchmarks/bench_kernels.py [--n 20000] [--phases 8] [--repeat 3]
"""
import argparse
import time

import numpy as np

from cocycle_kam import _kernels_py

try:
    from cocycle_kam import _kernels
except ImportError:
    _kernels = None


def _state(P):
    frame = np.tile(np.eye(2), (P, 1, 1))
    vec = np.tile([1.0, 0.0], (P, 1))
    return frame, np.zeros(P), vec, np.zeros(P)


def _inputs(P, n, seed=0):
    rng = np.random.default_rng(seed)
    alpha = 2 * np.pi * (np.sqrt(5) - 1) / 2
    th = rng.uniform(0, 2 * np.pi, P)[:, None] + alpha * np.arange(n)[None, :]
    v = np.ascontiguousarray(2e-3 * np.cos(th))
    ang = rng.uniform(-np.pi, np.pi, (P, n))
    mats = np.empty((P, n, 2, 2))
    mats[..., 0, 0] = np.cos(ang) * 1.1
    mats[..., 0, 1] = -np.sin(ang)
    mats[..., 1, 0] = np.sin(ang)
    mats[..., 1, 1] = np.cos(ang) / 1.1
    return v, np.ascontiguousarray(mats)


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def run(n, P, repeat):
    v, mats = _inputs(P, n)
    E = 0.3
    rows = []
    for name, mod in (("python", _kernels_py), ("cython", _kernels)):
        if mod is None:
            rows.append((name, None, None, None))
            continue

        def schr():
            st = _state(P)
            mod.schrodinger_step(E, v, *st)
            return st

        def mat():
            st = _state(P)
            mod.matrix_step(mats, *st)
            return st

        def growth():
            return mod.schrodinger_growth(E, v, np.tile(np.eye(2), (P, 1, 1)))

        rows.append((name,) + tuple(_time(f, repeat) for f in (schr, mat, growth)))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--phases", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    rows = run(a.n, a.phases, a.repeat)
    print(f"{a.phases} orbits x {a.n} steps, best of {a.repeat}")
    print(f"{'backend':8s} {'schrodinger':>12s} {'matrix':>12s} {'growth':>12s}")
    for name, *cols in rows:
        if cols[0] is None:
            print(f"{name:8s} {'(not built)':>12s}")
            continue
        print(f"{name:8s} " + " ".join(f"{c[0]:11.4f}s" for c in cols))
    py, cy = rows
    if cy[1] is not None:
        # both backends must agree before the timings mean anything
        d_log = max(abs(py[k][1][1] - cy[k][1][1]).max() for k in (1, 2))
        d_rot = max(abs(py[k][1][3] - cy[k][1][3]).max() for k in (1, 2))
        d_gr = abs(py[3][1] - cy[3][1]).max() / abs(py[3][1]).max()
        print(f"max |dlog| {d_log:.2e}  max |drot| {d_rot:.2e}  rel growth diff {d_gr:.2e}")
        print("speedup   " + " ".join(f"{py[k][0] / cy[k][0]:11.1f}x" for k in (1, 2, 3)))


if __name__ == "__main__":
    main()
