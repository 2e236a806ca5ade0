# cython: language_level=3
"""Compiled kernels; semantics mirror ``_fallback.py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def local_minima(field, double threshold):
    cdef const double[:, ::1] f = np.ascontiguousarray(field, dtype=np.float64)
    cdef Py_ssize_t n = f.shape[0], m = f.shape[1]
    cdef Py_ssize_t i, j, di, dj, ni, nj, flat, nflat
    cdef double v, nv
    cdef bint ok
    out = []
    for i in range(n):
        for j in range(m):
            v = f[i, j]
            if not v < threshold:
                continue
            flat = i * m + j
            ok = True
            for di in range(-1, 2):
                if not ok:
                    break
                for dj in range(-1, 2):
                    if di == 0 and dj == 0:
                        continue
                    ni = (i + di + n) % n
                    nj = (j + dj + m) % m
                    nv = f[ni, nj]
                    nflat = ni * m + nj
                    if not (v < nv or (v == nv and flat < nflat)):
                        ok = False
                        break
            if ok:
                out.append((i, j))
    if not out:
        return np.empty((0, 2), dtype=np.int64)
    return np.array(out, dtype=np.int64)


cdef inline Py_ssize_t _key(Py_ssize_t i, Py_ssize_t j, int vertical, Py_ssize_t m) nogil:
    return 2 * (i * (m + 1) + j) + vertical


def marching_squares(field, double level):
    cdef const double[:, ::1] f = np.ascontiguousarray(field, dtype=np.float64)
    cdef Py_ssize_t n = f.shape[0], m = f.shape[1]
    cdef Py_ssize_t n_keys = 2 * (n + 1) * (m + 1)
    cdef double[:, ::1] pts = np.full((n_keys, 2), np.nan)
    # up to two segments touch each edge point
    cdef Py_ssize_t[:, ::1] touch = np.full((n_keys, 2), -1, dtype=np.intp)
    seg_a_list = []
    seg_b_list = []
    cdef Py_ssize_t i, j, k, ns = 0
    cdef double v0, v1, v2, v3, t
    cdef int case
    cdef bint in0, in1, in2, in3, centre_in
    cdef Py_ssize_t e[4]
    cdef Py_ssize_t crossed[2]
    cdef Py_ssize_t nc

    for i in range(n - 1):
        for j in range(m - 1):
            v0 = f[i, j]
            v1 = f[i, j + 1]
            v2 = f[i + 1, j + 1]
            v3 = f[i + 1, j]
            in0 = v0 < level
            in1 = v1 < level
            in2 = v2 < level
            in3 = v3 < level
            case = in0 | (in1 << 1) | (in2 << 2) | (in3 << 3)
            if case == 0 or case == 15:
                continue
            e[0] = -1
            e[1] = -1
            e[2] = -1
            e[3] = -1
            if in0 != in1:
                k = _key(i, j, 0, m)
                if pts[k, 0] != pts[k, 0]:
                    t = (level - v0) / (v1 - v0)
                    pts[k, 0] = i
                    pts[k, 1] = j + t
                e[0] = k
            if in1 != in2:
                k = _key(i, j + 1, 1, m)
                if pts[k, 0] != pts[k, 0]:
                    t = (level - v1) / (v2 - v1)
                    pts[k, 0] = i + t
                    pts[k, 1] = j + 1
                e[1] = k
            if in3 != in2:
                k = _key(i + 1, j, 0, m)
                if pts[k, 0] != pts[k, 0]:
                    t = (level - v3) / (v2 - v3)
                    pts[k, 0] = i + 1
                    pts[k, 1] = j + t
                e[2] = k
            if in0 != in3:
                k = _key(i, j, 1, m)
                if pts[k, 0] != pts[k, 0]:
                    t = (level - v0) / (v3 - v0)
                    pts[k, 0] = i + t
                    pts[k, 1] = j
                e[3] = k
            if case == 5 or case == 10:
                centre_in = 0.25 * (v0 + v1 + v2 + v3) < level
                if (case == 5) == centre_in:
                    ns = _add(seg_a_list, seg_b_list, touch, e[0], e[1], ns)
                    ns = _add(seg_a_list, seg_b_list, touch, e[2], e[3], ns)
                else:
                    ns = _add(seg_a_list, seg_b_list, touch, e[3], e[0], ns)
                    ns = _add(seg_a_list, seg_b_list, touch, e[1], e[2], ns)
            else:
                nc = 0
                for k in range(4):
                    if e[k] >= 0:
                        crossed[nc] = e[k]
                        nc += 1
                ns = _add(seg_a_list, seg_b_list, touch, crossed[0], crossed[1], ns)

    return _link(seg_a_list, seg_b_list, touch, pts, ns)


cdef Py_ssize_t _add(list la, list lb, Py_ssize_t[:, ::1] touch,
                     Py_ssize_t a, Py_ssize_t b, Py_ssize_t ns):
    la.append(a)
    lb.append(b)
    if touch[a, 0] < 0:
        touch[a, 0] = ns
    else:
        touch[a, 1] = ns
    if touch[b, 0] < 0:
        touch[b, 0] = ns
    else:
        touch[b, 1] = ns
    return ns + 1


cdef Py_ssize_t _next(Py_ssize_t[:, ::1] touch, unsigned char[::1] used,
                      Py_ssize_t seg, Py_ssize_t edge):
    cdef Py_ssize_t c
    for c in range(2):
        if touch[edge, c] >= 0 and touch[edge, c] != seg and not used[touch[edge, c]]:
            return touch[edge, c]
    return -1


def _link(list la, list lb, Py_ssize_t[:, ::1] touch, double[:, ::1] pts, Py_ssize_t ns):
    cdef Py_ssize_t[::1] sa = np.array(la, dtype=np.intp) if ns else np.empty(0, dtype=np.intp)
    cdef Py_ssize_t[::1] sb = np.array(lb, dtype=np.intp) if ns else np.empty(0, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(ns, dtype=np.uint8)
    cdef Py_ssize_t s0, seg, edge, a, nxt
    out = []
    for s0 in range(ns):
        if used[s0]:
            continue
        used[s0] = 1
        a = sa[s0]
        keys = [a, sb[s0]]
        seg = s0
        edge = sb[s0]
        while True:
            nxt = _next(touch, used, seg, edge)
            if nxt < 0:
                break
            used[nxt] = 1
            seg = nxt
            edge = sb[nxt] if sa[nxt] == edge else sa[nxt]
            keys.append(edge)
        closed = edge == a and len(keys) > 2
        if not closed:
            back = []
            seg = s0
            edge = a
            while True:
                nxt = _next(touch, used, seg, edge)
                if nxt < 0:
                    break
                used[nxt] = 1
                seg = nxt
                edge = sb[nxt] if sa[nxt] == edge else sa[nxt]
                back.append(edge)
            keys = back[::-1] + keys
        idx = np.array(keys, dtype=np.intp)
        out.append((np.asarray(pts)[idx].copy(), bool(closed)))
    return out


def point_in_polygon(poly, double x, double y):
    cdef const double[:, ::1] p = np.ascontiguousarray(poly, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i, j
    cdef bint inside = False
    cdef double xi, yi, xj, yj
    for i in range(n):
        j = (i + 1) % n
        xi = p[i, 0]
        yi = p[i, 1]
        xj = p[j, 0]
        yj = p[j, 1]
        if (yi > y) != (yj > y):
            if x < (xj - xi) * (y - yi) / (yj - yi) + xi:
                inside = not inside
    return bool(inside)


def ou_path(u0, lam, forcing, sigma, double dt, noise, Py_ssize_t record_every):
    u0 = np.asarray(u0, dtype=np.complex128)
    cdef Py_ssize_t K = u0.shape[0]
    cdef double[::1] ur = np.ascontiguousarray(u0.real, dtype=np.float64).copy()
    cdef double[::1] ui = np.ascontiguousarray(u0.imag, dtype=np.float64).copy()
    cdef const double[::1] lr = np.ascontiguousarray(np.real(lam), dtype=np.float64)
    cdef const double[::1] li = np.ascontiguousarray(np.imag(lam), dtype=np.float64)
    cdef const double[::1] fr = np.ascontiguousarray(np.real(forcing), dtype=np.float64)
    cdef const double[::1] fi = np.ascontiguousarray(np.imag(forcing), dtype=np.float64)
    cdef double[::1] amp = np.asarray(sigma, dtype=np.float64) * np.sqrt(dt)
    cdef const double[:, ::1] nr = np.ascontiguousarray(noise.real, dtype=np.float64)
    cdef const double[:, ::1] ni = np.ascontiguousarray(noise.imag, dtype=np.float64)
    cdef Py_ssize_t n_steps = nr.shape[0], s, k, r = 1
    out = np.empty((n_steps // record_every + 1, K), dtype=np.complex128)
    cdef double[:, ::1] o_r = np.empty((out.shape[0], K))
    cdef double[:, ::1] o_i = np.empty((out.shape[0], K))
    cdef double dr, di
    for k in range(K):
        o_r[0, k] = ur[k]
        o_i[0, k] = ui[k]
    with nogil:
        for s in range(n_steps):
            for k in range(K):
                dr = lr[k] * ur[k] - li[k] * ui[k] + fr[k]
                di = lr[k] * ui[k] + li[k] * ur[k] + fi[k]
                ur[k] = ur[k] + dr * dt + amp[k] * nr[s, k]
                ui[k] = ui[k] + di * dt + amp[k] * ni[s, k]
            if (s + 1) % record_every == 0:
                for k in range(K):
                    o_r[r, k] = ur[k]
                    o_i[r, k] = ui[k]
                r += 1
    out.real = np.asarray(o_r)
    out.imag = np.asarray(o_i)
    return out
