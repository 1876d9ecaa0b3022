"""Benchmark the compiled kernel backend against the pure-NumPy fallback.

Times the two hot kernels at realistic shapes (draws x classes batches) and
prints a small table.  Run with::

    python3 benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from lcscreen._kernels import BACKEND, _fallback

if BACKEND == "compiled":
    from lcscreen._kernels import _core as _compiled
else:
    _compiled = None


def _time(fn, *args, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_cs_logpdf(m: int, n: int) -> dict[str, float]:
    rng = np.random.default_rng(0)
    diffs = rng.normal(size=(m, n))
    sigma2 = rng.uniform(0.5, 4.0, size=m)
    rho = rng.uniform(0.0, 0.95, size=m)
    out = {"fallback": _time(_fallback.cs_logpdf_many, diffs, sigma2, rho)}
    if _compiled is not None:
        out["compiled"] = _time(_compiled.cs_logpdf_many, diffs, sigma2, rho)
        ref = _fallback.cs_logpdf_many(diffs, sigma2, rho)
        got = _compiled.cs_logpdf_many(diffs, sigma2, rho)
        assert np.allclose(ref, got, atol=1e-10), "backend mismatch"
    return out


def bench_cell_masses(k: int, nx: int, ny: int) -> dict[str, float]:
    rng = np.random.default_rng(1)
    weights = rng.dirichlet(np.ones(k))
    mx = rng.normal(0.0, 5.0, size=k)
    my = rng.normal(0.0, 5.0, size=k)
    sx = rng.uniform(0.5, 3.0, size=k)
    sy = rng.uniform(0.5, 3.0, size=k)
    xe = np.linspace(-16.0, 16.0, nx + 1)
    ye = np.linspace(-24.0, 16.0, ny + 1)
    out = {"fallback": _time(_fallback.cell_masses, weights, mx, sx, my, sy, xe, ye)}
    if _compiled is not None:
        out["compiled"] = _time(_compiled.cell_masses, weights, mx, sx, my, sy, xe, ye)
        ref = _fallback.cell_masses(weights, mx, sx, my, sy, xe, ye)
        got = _compiled.cell_masses(weights, mx, sx, my, sy, xe, ye)
        assert np.allclose(ref, got, atol=1e-12), "backend mismatch"
    return out


def main() -> None:
    print(f"active backend: {BACKEND}")
    cases = [
        ("cs_logpdf_many (30000 x 7)", bench_cs_logpdf, (30_000, 7)),
        ("cs_logpdf_many (300000 x 3)", bench_cs_logpdf, (300_000, 3)),
        ("cell_masses (30000 comps, 16x20)", bench_cell_masses, (30_000, 16, 20)),
        ("cell_masses (5000 comps, 128x160)", bench_cell_masses, (5_000, 128, 160)),
    ]
    print(f"{'kernel':<36} {'fallback':>10} {'compiled':>10} {'speedup':>8}")
    for label, fn, args in cases:
        res = fn(*args)
        fb = res["fallback"]
        if "compiled" in res:
            cp = res["compiled"]
            print(f"{label:<36} {fb * 1e3:>8.2f}ms {cp * 1e3:>8.2f}ms {fb / cp:>7.2f}x")
        else:
            print(f"{label:<36} {fb * 1e3:>8.2f}ms {'n/a':>10} {'n/a':>8}")


if __name__ == "__main__":
    main()
