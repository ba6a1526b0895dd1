"""Benchmark the numba kernels against their pure-numpy twins.

Run:  python benchmarks/bench_kernels.py [--quick]

The same functions back the library at runtime; the backend a run uses is
selected by HESSIAN_LAB_BACKEND (auto prefers numba).
"""

import argparse
import time

import numpy as np

from hessian_lab import kernels
from hessian_lab.backend import USE_NUMBA


def _time(fn, *args, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_spectra(npts, n, rng):
    a = rng.normal(size=(npts, n, n))
    A = np.ascontiguousarray((a + a.transpose(0, 2, 1)) / 2)
    q = rng.normal(size=(npts, n, n))
    G = np.ascontiguousarray(q @ q.transpose(0, 2, 1) + n * np.eye(n))
    t_np, (lam_np, E_np) = _time(kernels._spectra_numpy, A, G)
    row = {"kernel": f"spectra n={n} N={npts}", "numpy_s": t_np}
    if USE_NUMBA:
        kernels._spectra_numba(A[:8], G[:8])  # compile outside the timer
        t_nb, (lam_nb, _) = _time(kernels._spectra_numba, A, G)
        row["numba_s"] = t_nb
        row["speedup"] = t_np / t_nb
        assert np.abs(lam_nb - lam_np).max() < 1e-10 * (1 + np.abs(lam_np).max())
    return row


def bench_contraction(npts, n, rng):
    E = rng.normal(size=(npts, n, n))
    w = rng.uniform(0.5, 2.0, size=(npts, n))
    t_np, P_np = _time(kernels._contraction_numpy, E, w)
    row = {"kernel": f"contraction n={n} N={npts}", "numpy_s": t_np}
    if USE_NUMBA:
        kernels._contraction_numba(E[:8], w[:8])
        t_nb, P_nb = _time(kernels._contraction_numba, E, w)
        row["numba_s"] = t_nb
        row["speedup"] = t_np / t_nb
        assert np.abs(P_nb - P_np).max() < 1e-10 * (1 + np.abs(P_np).max())
    return row


def bench_plane_mask(res, dim, rng):
    from hessian_lab.grid import BallDomain

    dom = BallDomain(dim, 1.0, res)
    v = dom.radius_sq() - 1.0
    grad = dom.gradient(v).reshape(-1, dim)
    pts = dom.points()
    in_ball = (dom.radius_sq() <= 1.0).ravel()
    vals = v.ravel()
    cand = dom.interior_mask().ravel() & (np.linalg.norm(grad, axis=1) < 0.5)
    args = (
        pts[cand],
        vals[cand],
        grad[cand],
        pts[in_ball],
        vals[in_ball],
        1e-10,
    )
    t_np, mask_np = _time(kernels._plane_mask_numpy, *args, repeat=1)
    row = {
        "kernel": f"plane mask {dim}d res={res} ({cand.sum()}x{in_ball.sum()})",
        "numpy_s": t_np,
    }
    if USE_NUMBA:
        kernels._plane_mask_numba(*args)
        t_nb, mask_nb = _time(kernels._plane_mask_numba, *args, repeat=1)
        row["numba_s"] = t_nb
        row["speedup"] = t_np / t_nb
        assert np.array_equal(mask_nb, mask_np)
    return row


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    npts = 40_000 if args.quick else 200_000
    res = 48 if args.quick else 80
    rows = [
        bench_spectra(npts, 2, rng),
        bench_spectra(npts, 3, rng),
        bench_contraction(npts, 2, rng),
        bench_contraction(npts, 3, rng),
        bench_plane_mask(res, 3, rng),
    ]
    if not USE_NUMBA:
        print("numba unavailable or disabled: numpy lane only\n")
    width = max(len(r["kernel"]) for r in rows) + 2
    header = f"{'kernel':<{width}}{'numpy [s]':>12}"
    if USE_NUMBA:
        header += f"{'numba [s]':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for r in rows:
        line = f"{r['kernel']:<{width}}{r['numpy_s']:>12.4f}"
        if USE_NUMBA:
            line += f"{r['numba_s']:>12.4f}{r['speedup']:>10.2f}"
        print(line)


if __name__ == "__main__":
    main()
