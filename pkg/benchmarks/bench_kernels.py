"""Compare the compiled and pure-Python kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on the same inputs under every available backend; outputs are
checked for agreement before timings are reported.
"""
import argparse
import json
import time

import numpy as np

from probeddy import kernels


def _inputs(rng):
    n = 128
    x = np.arange(n) * (400.0 / n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    field = sum(
        -np.exp(-(((X - cx + 200) % 400 - 200) ** 2 + ((Y - cy + 200) % 400 - 200) ** 2) / (2 * 15.0**2))
        for cx, cy in rng.uniform(0, 400, (12, 2))
    ) + 0.05 * rng.standard_normal((n, n))
    theta = np.linspace(0, 2 * np.pi, 400)
    poly = np.column_stack([50 + 30 * np.cos(theta), 50 + 20 * np.sin(theta)])
    pts = rng.uniform(0, 100, (2000, 2))
    K = 112
    lam = -rng.uniform(0.05, 0.5, K) + 1j * rng.uniform(-0.1, 0.1, K)
    noise = (rng.standard_normal((2000, K)) + 1j * rng.standard_normal((2000, K))) / np.sqrt(2)
    return {
        "local_minima": lambda k: k.local_minima(field, -0.2),
        "marching_squares": lambda k: k.marching_squares(field, -0.2),
        "point_in_polygon": lambda k: [k.point_in_polygon(poly, float(a), float(b)) for a, b in pts],
        "ou_path": lambda k: k.ou_path(np.zeros(K, complex), lam, np.zeros(K, complex),
                                       np.ones(K), 0.01, noise, 10),
    }


def _same(a, b):
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    if isinstance(a, list) and a and isinstance(a[0], tuple):
        return len(a) == len(b) and all(np.allclose(p, q) and c == d for (p, c), (q, d) in zip(a, b))
    return a == b


def run(repeat=5):
    rng = np.random.default_rng(0)
    cases = _inputs(rng)
    backends = kernels.available_backends()
    results = {}
    for name, fn in cases.items():
        ref = fn(kernels.get_backend("python"))
        row = {}
        for b in backends:
            mod = kernels.get_backend(b)
            out = fn(mod)
            if not _same(ref, out):
                raise AssertionError(f"{name}: backend {b} disagrees with python")
            best = np.inf
            for _ in range(repeat):
                t0 = time.perf_counter()
                fn(mod)
                best = min(best, time.perf_counter() - t0)
            row[b] = best
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        results[name] = row
    return results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()
    res = run(args.repeat)
    print(f"{'kernel':<18}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for name, row in res.items():
        cy = row.get("cython")
        cy_s = "" if cy is None else f"{1e3 * cy:.3f}"
        sp_s = "" if cy is None else f"{row['speedup']:.1f}x"
        print(f"{name:<18}{1e3 * row['python']:>14.3f}{cy_s:>14}{sp_s:>10}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=1)


if __name__ == "__main__":
    main()
