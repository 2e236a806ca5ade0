import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probeddy import kernels

BACKENDS = kernels.available_backends()
PY = kernels.get_backend("python")


def smooth_field(seed, n=24, bumps=5):
    rng = np.random.default_rng(seed)
    x = np.arange(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = np.zeros((n, n))
    for cx, cy, s, a in zip(*rng.uniform(0, n, (2, bumps)), rng.uniform(1.5, 4, bumps), rng.uniform(-1, 1, bumps)):
        dx = (X - cx + n / 2) % n - n / 2
        dy = (Y - cy + n / 2) % n - n / 2
        f += a * np.exp(-(dx**2 + dy**2) / (2 * s**2))
    return f


def brute_minima(f, thr):
    n, m = f.shape
    out = []
    for i in range(n):
        for j in range(m):
            if not f[i, j] < thr:
                continue
            ok = True
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == dj == 0:
                        continue
                    a, b = (i + di) % n, (j + dj) % m
                    v = f[a, b]
                    if v < f[i, j] or (v == f[i, j] and a * m + b < i * m + j):
                        ok = False
            if ok:
                out.append((i, j))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def test_backend_selection():
    assert kernels.BACKEND in BACKENDS
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_python_fallback_forced_by_environment():
    code = "from probeddy import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, PROBEDDY_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), q=st.integers(-3, 3))
def test_local_minima_brute_force(backend, seed, q):
    f = np.round(smooth_field(seed), 1)  # rounding creates plateaus
    thr = 0.1 * q
    np.testing.assert_array_equal(kernels.get_backend(backend).local_minima(f, thr), brute_minima(f, thr))


@pytest.mark.parametrize("backend", BACKENDS)
def test_plateau_tie_break(backend):
    f = np.zeros((6, 6))
    f[2, 3] = f[2, 4] = f[3, 3] = -1.0
    np.testing.assert_array_equal(kernels.get_backend(backend).local_minima(f, -0.5), [[2, 3]])


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), level=st.floats(-0.5, 0.5))
def test_marching_squares_matches_reference(backend, seed, level):
    f = smooth_field(seed)
    ref = PY.marching_squares(f, level)
    out = kernels.get_backend(backend).marching_squares(f, level)
    assert len(out) == len(ref)
    for (p, c), (q, d) in zip(out, ref):
        assert c == d
        np.testing.assert_allclose(p, q, rtol=0, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_circle_contour(backend):
    n = 41
    x = np.arange(n) - 20.0
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = np.hypot(X, Y)
    polys = kernels.get_backend(backend).marching_squares(f, 10.0)
    assert len(polys) == 1 and polys[0][1]
    p = polys[0][0]
    np.testing.assert_array_equal(p[0], p[-1])
    r = np.hypot(p[:, 0] - 20, p[:, 1] - 20)
    assert np.abs(r - 10).max() < 0.1


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_point_in_polygon_against_star_oracle(backend, seed):
    # star-shaped polygon around the origin: containment has a closed form via the radius function
    rng = np.random.default_rng(seed)
    k = int(rng.integers(5, 40))
    th = np.sort(rng.uniform(0, 2 * np.pi, k))
    rad = rng.uniform(1, 3, k)
    gaps = np.diff(np.concatenate([th, th[:1] + 2 * np.pi]))
    if gaps.max() >= np.pi * 0.95:
        return  # origin must lie strictly inside for the polygon to be star-shaped about it
    pts = np.column_stack([rad * np.cos(th), rad * np.sin(th)])
    poly = np.vstack([pts, pts[:1]])
    kern = kernels.get_backend(backend)
    for x, y in rng.uniform(-3.5, 3.5, (40, 2)):
        phi = np.arctan2(y, x) % (2 * np.pi)
        # edge crossing the ray at angle phi
        i = np.searchsorted(th, phi) % k
        a, b = pts[i - 1], pts[i]
        cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
        denom = (b[0] - a[0]) * (0 - a[1]) - (b[1] - a[1]) * (0 - a[0])
        if abs(cross) < 1e-9:
            continue
        inside = np.sign(cross) == np.sign(denom)
        assert kern.point_in_polygon(poly, float(x), float(y)) == inside


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), every=st.integers(1, 7))
def test_ou_path_matches_reference_loop(backend, seed, every):
    rng = np.random.default_rng(seed)
    K, S = 5, 35
    u0 = rng.normal(size=K) + 1j * rng.normal(size=K)
    lam = -rng.uniform(0.1, 1, K) + 1j * rng.normal(size=K)
    f = rng.normal(size=K) + 1j * rng.normal(size=K)
    sig = rng.uniform(0, 2, K)
    noise = rng.normal(size=(S, K)) + 1j * rng.normal(size=(S, K))
    out = kernels.get_backend(backend).ou_path(u0, lam, f, sig, 0.01, noise, every)
    u, ref = u0.copy(), [u0.copy()]
    for s in range(S):
        u = u + (lam * u + f) * 0.01 + sig * np.sqrt(0.01) * noise[s]
        if (s + 1) % every == 0:
            ref.append(u.copy())
    np.testing.assert_allclose(out, np.array(ref), rtol=1e-13, atol=1e-13)
    np.testing.assert_array_equal(out, PY.ou_path(u0, lam, f, sig, 0.01, noise, every))
