"""Pure-Python/numpy implementations of the hot kernels.

These define the reference semantics; ``_ckernels.pyx`` must agree with them.
"""
import numpy as np

# (di, dj) offsets of the 8-neighbourhood
_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def local_minima(field, threshold):
    """Strict periodic 8-neighbour minima of ``field`` lying below ``threshold``.

    Ties are broken in favour of the lower flat index, so a plateau yields a
    single minimum at its lowest (row, col) cell.

    Returns
    -------
    ndarray of shape (m, 2), int64
        (row, col) indices sorted by flat index.
    """
    f = np.asarray(field, dtype=float)
    n, m = f.shape
    flat = np.arange(n * m).reshape(n, m)
    is_min = f < threshold
    for di, dj in _NEIGHBOURS:
        nb = np.roll(f, (-di, -dj), axis=(0, 1))
        nb_flat = np.roll(flat, (-di, -dj), axis=(0, 1))
        is_min &= (f < nb) | ((f == nb) & (flat < nb_flat))
    return np.argwhere(is_min).astype(np.int64)


def _edge_key(i, j, horizontal, m):
    return 2 * (i * (m + 1) + j) + (0 if horizontal else 1)


def marching_squares(field, level):
    """Contour ``field`` (non-periodic) at ``level``.

    Inside is ``value < level``. Saddle cells are resolved with the cell-centre
    average. Coordinates are fractional (row, col) indices.

    Returns
    -------
    list of (ndarray (p, 2), bool)
        Polylines with a closed flag; closed polylines repeat the first vertex
        at the end.
    """
    f = np.asarray(field, dtype=float)
    n, m = f.shape
    points = {}
    segments = []

    def crossing(key, r0, c0, v0, r1, c1, v1):
        if key not in points:
            t = (level - v0) / (v1 - v0)
            points[key] = (r0 + t * (r1 - r0), c0 + t * (c1 - c0))
        return key

    for i in range(n - 1):
        for j in range(m - 1):
            v0, v1, v2, v3 = f[i, j], f[i, j + 1], f[i + 1, j + 1], f[i + 1, j]
            inside = (v0 < level, v1 < level, v2 < level, v3 < level)
            case = inside[0] | (inside[1] << 1) | (inside[2] << 2) | (inside[3] << 3)
            if case == 0 or case == 15:
                continue
            e = [None, None, None, None]
            if inside[0] != inside[1]:
                e[0] = crossing(_edge_key(i, j, True, m), i, j, v0, i, j + 1, v1)
            if inside[1] != inside[2]:
                e[1] = crossing(_edge_key(i, j + 1, False, m), i, j + 1, v1, i + 1, j + 1, v2)
            if inside[3] != inside[2]:
                e[2] = crossing(_edge_key(i + 1, j, True, m), i + 1, j, v3, i + 1, j + 1, v2)
            if inside[0] != inside[3]:
                e[3] = crossing(_edge_key(i, j, False, m), i, j, v0, i + 1, j, v3)
            if case == 5 or case == 10:
                centre_in = 0.25 * (v0 + v1 + v2 + v3) < level
                if (case == 5) == centre_in:
                    # isolate corners 1 and 3
                    segments.append((e[0], e[1]))
                    segments.append((e[2], e[3]))
                else:
                    # isolate corners 0 and 2
                    segments.append((e[3], e[0]))
                    segments.append((e[1], e[2]))
            else:
                crossed = [k for k in e if k is not None]
                segments.append((crossed[0], crossed[1]))

    return _link(segments, points)


def _link(segments, points):
    at_edge = {}
    for s, (a, b) in enumerate(segments):
        at_edge.setdefault(a, []).append(s)
        at_edge.setdefault(b, []).append(s)

    used = [False] * len(segments)
    out = []

    def walk(seg, edge):
        chain = []
        while True:
            nxt = [s for s in at_edge[edge] if s != seg and not used[s]]
            if not nxt:
                return chain, edge
            seg = nxt[0]
            used[seg] = True
            a, b = segments[seg]
            edge = b if a == edge else a
            chain.append(edge)

    for s0, (a, b) in enumerate(segments):
        if used[s0]:
            continue
        used[s0] = True
        fwd, end = walk(s0, b)
        keys = [a, b] + fwd
        closed = end == a and len(keys) > 2
        if not closed:
            back, _ = walk(s0, a)
            keys = back[::-1] + keys
        poly = np.array([points[k] for k in keys], dtype=float)
        out.append((poly, closed))
    return out


def point_in_polygon(poly, x, y):
    """Even-odd ray casting test of point (x, y) against a polygon (p, 2)."""
    poly = np.asarray(poly, dtype=float)
    px, py = poly[:, 0], poly[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    straddle = (py > y) != (qy > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = (qx - px) * (y - py) / (qy - py) + px
    return bool(np.count_nonzero(straddle & (x < xcross)) % 2)


def ou_path(u0, lam, forcing, sigma, dt, noise, record_every):
    """Euler-Maruyama path of independent complex OU modes.

    ``u <- u + (lam*u + forcing)*dt + sigma*sqrt(dt)*noise[s]``, written in
    real arithmetic so that the compiled kernel reproduces it bit for bit.

    Returns the states after every ``record_every`` steps, starting with ``u0``.
    """
    u0 = np.asarray(u0, dtype=complex)
    ur, ui = u0.real.copy(), u0.imag.copy()
    lr, li = np.real(lam).astype(float), np.imag(lam).astype(float)
    fr, fi = np.real(forcing).astype(float), np.imag(forcing).astype(float)
    amp = np.asarray(sigma, dtype=float) * np.sqrt(dt)
    nr, ni = np.ascontiguousarray(noise.real), np.ascontiguousarray(noise.imag)
    n_steps = noise.shape[0]
    out = np.empty((n_steps // record_every + 1, u0.size), dtype=complex)
    out[0] = u0
    r = 1
    for s in range(n_steps):
        dr = lr * ur - li * ui + fr
        di = lr * ui + li * ur + fi
        ur = ur + dr * dt + amp * nr[s]
        ui = ui + di * dt + amp * ni[s]
        if (s + 1) % record_every == 0:
            out[r].real = ur
            out[r].imag = ui
            r += 1
    return out
