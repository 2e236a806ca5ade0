"""Okubo-Weiss diagnostics: field computation, eddy detection and the
mean-fluctuation decomposition of the expected OW field.

``OW = s_n^2 + s_s^2 - omega^2`` with normal strain ``s_n = u_x - v_y``,
shear strain ``s_s = v_x + u_y`` and vorticity ``omega = v_x - u_y``.
Eddy cores are strict periodic local minima below ``-0.2 sigma_OW``; each
boundary is the closed threshold contour around its core.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import InvalidParameterError
from .spectral_ocean import velocity_gradients

THRESHOLD_FACTOR = 0.2
OW_MAGIC = b"PBOWFLD\x00"
OW_VERSION = 1


def ow_from_gradients(u_x, u_y, v_x, v_y):
    s_n = u_x - v_y
    s_s = v_x + u_y
    w = v_x - u_y
    return s_n**2 + s_s**2 - w**2


@dataclass(frozen=True)
class OWField:
    """OW values on a periodic grid; ``values[i, j]`` sits at ``(i, j) * spacing``."""

    values: np.ndarray
    spacing: float
    sigma_ow: float
    threshold: float
    time: float = 0.0

    @property
    def n(self):
        return self.values.shape[0]

    @classmethod
    def from_array(cls, values, spacing, sigma_ow=None, threshold_factor=THRESHOLD_FACTOR, time=0.0):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InvalidParameterError("OW field must be a square 2-D array")
        s = float(values.std()) if sigma_ow is None else float(sigma_ow)
        if s < 0:
            raise InvalidParameterError("sigma_ow must be non-negative")
        return cls(values, float(spacing), s, -threshold_factor * s, float(time))


def ow_field(state, n=128, sigma_ow=None, threshold_factor=THRESHOLD_FACTOR):
    """OW field of a spectral state from spectral velocity gradients.

    ``sigma_ow`` defaults to the standard deviation over this snapshot's grid;
    pass a fixed (climatological) value for comparability across time.
    """
    g = velocity_gradients(state, n)
    values = ow_from_gradients(g["u_x"], g["u_y"], g["v_x"], g["v_y"])
    return OWField.from_array(values, state.domain_size / n, sigma_ow, threshold_factor, state.time)


def climatological_sigma_ow(states, n=128):
    """Standard deviation of OW pooled over the grids of ``states``."""
    acc = 0.0
    acc2 = 0.0
    count = 0
    for st in states:
        v = ow_field(st, n).values
        acc += v.sum()
        acc2 += (v**2).sum()
        count += v.size
    if count == 0:
        raise InvalidParameterError("no states given")
    mean = acc / count
    return float(np.sqrt(max(acc2 / count - mean**2, 0.0)))


# -- detection -------------------------------------------------------------------------


@dataclass
class EddyDetection:
    """Eddies in one OW field.

    ``positions`` (m, 2) are core locations in km, ``indices`` their grid
    indices. ``boundaries[i]`` is a closed polygon (km, unwrapped around the
    core, first vertex repeated) or ``None`` when the threshold region wraps
    around the domain; ``sizes[i]`` is then NaN and ``flags[i]`` says why.
    """

    positions: np.ndarray
    indices: np.ndarray
    ow_values: np.ndarray
    boundaries: list
    sizes: np.ndarray
    flags: list = field(default_factory=list)
    time: float = 0.0
    threshold: float = 0.0
    domain_size: float = 0.0

    @property
    def count(self):
        return len(self.ow_values)

    def __len__(self):
        return self.count

    @classmethod
    def empty(cls, time=0.0, threshold=0.0, domain_size=0.0):
        return cls(np.zeros((0, 2)), np.zeros((0, 2), dtype=np.int64), np.zeros(0), [], np.zeros(0), [],
                   time, threshold, domain_size)


def _shoelace(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


def _core_boundary(values, threshold, i, j):
    """Closed threshold contour around grid cell (i, j), in fractional indices.

    Returns ``(polygon or None, flag)``; polygon coordinates are unwrapped
    relative to the original grid (they may lie outside ``[0, n)``).
    """
    n = values.shape[0]
    c = n // 2
    shift = (c - i, c - j)
    rolled = np.roll(values, shift, axis=(0, 1))
    mask = rolled < threshold
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    comp = labels == labels[c, c]
    rows = np.flatnonzero(comp.any(axis=1))
    cols = np.flatnonzero(comp.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1], cols[0], cols[-1]
    if r0 == 0 or c0 == 0 or r1 == n - 1 or c1 == n - 1:
        return None, "wraps_domain"
    window = rolled[r0 - 1 : r1 + 2, c0 - 1 : c1 + 2].copy()
    # other threshold regions are not 8-adjacent to this one, so lifting them
    # above the level leaves this region's contour unchanged
    other = mask[r0 - 1 : r1 + 2, c0 - 1 : c1 + 2] & ~comp[r0 - 1 : r1 + 2, c0 - 1 : c1 + 2]
    window[other] = threshold + abs(threshold) + 1.0
    pr, pc = c - (r0 - 1), c - (c0 - 1)
    best, best_area = None, np.inf
    for poly, closed in kernels.marching_squares(window, threshold):
        if not closed:
            continue
        if not kernels.point_in_polygon(poly, float(pr), float(pc)):
            continue
        area = _shoelace(poly)
        if area < best_area:
            best, best_area = poly, area
    if best is None:
        return None, "no_closed_contour"
    off = np.array([r0 - 1 - shift[0], c0 - 1 - shift[1]], dtype=float)
    return best + off, ""


def detect_eddies(field: OWField) -> EddyDetection:
    """Cores, boundaries and areas (km^2) of eddies in an OW field.

    Plateaus are resolved towards the lowest flattened (row, col) index.
    """
    n = field.n
    h = field.spacing
    L = n * h
    if field.threshold >= 0:
        # a zero threshold (sigma_OW = 0) admits no eddies
        return EddyDetection.empty(field.time, field.threshold, L)
    idx = kernels.local_minima(field.values, field.threshold)
    bounds, sizes, flags = [], [], []
    for i, j in idx:
        poly, flag = _core_boundary(field.values, field.threshold, int(i), int(j))
        if poly is None:
            bounds.append(None)
            sizes.append(np.nan)
        else:
            bounds.append(poly * h)
            sizes.append(_shoelace(poly) * h * h)
        flags.append(flag)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 2)
    return EddyDetection(
        positions=idx * h,
        indices=idx,
        ow_values=field.values[idx[:, 0], idx[:, 1]] if len(idx) else np.zeros(0),
        boundaries=bounds,
        sizes=np.asarray(sizes, dtype=float),
        flags=flags,
        time=field.time,
        threshold=field.threshold,
        domain_size=L,
    )


# -- expected OW decomposition ---------------------------------------------------------


def expected_ow_from_gradients(grads):
    """Mean OW and its mean-fluctuation decomposition from per-sample gradients.

    ``grads`` is a sequence of mappings with ``u_x, u_y, v_x, v_y`` arrays.
    Expectations are sample means, so the identity is exact up to rounding.
    """
    if len(grads) < 2:
        raise InvalidParameterError("expected_ow needs at least two samples")
    G = {k: np.stack([g[k] for g in grads]) for k in ("u_x", "u_y", "v_x", "v_y")}
    mean_field = np.mean([ow_from_gradients(*(g[k] for k in ("u_x", "u_y", "v_x", "v_y"))) for g in grads], axis=0)
    bar = {k: v.mean(axis=0) for k, v in G.items()}
    p = {k: G[k] - bar[k] for k in G}
    ow_bar = ow_from_gradients(bar["u_x"], bar["u_y"], bar["v_x"], bar["v_y"])
    terms = {
        "ux2": (p["u_x"] ** 2).mean(axis=0),
        "ux_vy": -2.0 * (p["u_x"] * p["v_y"]).mean(axis=0),
        "vy2": (p["v_y"] ** 2).mean(axis=0),
        "vx_uy": 4.0 * (p["v_x"] * p["u_y"]).mean(axis=0),
    }
    decomposition = ow_bar + terms["ux2"] + terms["ux_vy"] + terms["vy2"] + terms["vx_uy"]
    incompressible = (
        4.0 * bar["u_x"] ** 2 + 4.0 * bar["v_x"] * bar["u_y"]
        + 4.0 * terms["ux2"] + terms["vx_uy"]
    )
    return {
        "mean_field": mean_field,
        "ow_of_mean": ow_bar,
        "terms": terms,
        "decomposition": decomposition,
        "incompressible": incompressible,
    }


def expected_ow(samples, n=128):
    """Expected OW over spectral states, evaluated on an ``n x n`` grid."""
    samples = list(samples)
    if len(samples) < 2:
        raise InvalidParameterError("expected_ow needs at least two samples")
    return expected_ow_from_gradients([velocity_gradients(s, n) for s in samples])


# -- export ------------------------------------------------------------------------------


def write_ow_field_binary(path, field: OWField):
    """Magic, version, then ``n, spacing, time, sigma_ow, threshold`` and row-major values."""
    with open(path, "wb") as fh:
        fh.write(OW_MAGIC)
        fh.write(struct.pack("<II4d", OW_VERSION, field.n, field.spacing, field.time,
                             field.sigma_ow, field.threshold))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_ow_field_binary(path) -> OWField:
    with open(path, "rb") as fh:
        if fh.read(len(OW_MAGIC)) != OW_MAGIC:
            raise InvalidParameterError(f"{path} is not an OW field file")
        version, n, spacing, time, sigma, thr = struct.unpack("<II4d", fh.read(struct.calcsize("<II4d")))
        if version != OW_VERSION:
            raise InvalidParameterError(f"unsupported OW field version {version}")
        values = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n).copy()
    return OWField(values, spacing, sigma, thr, time)


def write_ow_field_csv(path, field: OWField):
    with open(path, "w", newline="") as fh:
        fh.write(f"# n={field.n} spacing_km={field.spacing!r} time_days={field.time!r} "
                 f"sigma_ow={field.sigma_ow!r} threshold={field.threshold!r}\n")
        w = csv.writer(fh)
        w.writerow(["i", "j", "x_km", "y_km", "ow"])
        for i in range(field.n):
            for j in range(field.n):
                w.writerow([i, j, repr(i * field.spacing), repr(j * field.spacing), repr(float(field.values[i, j]))])


def write_eddy_catalog_csv(path, detections, sample_ids=None):
    """Rows ``(time, sample_id, core_x, core_y, ow_value, area_km2)``.

    ``detections`` is a flat sequence; ``sample_ids`` gives the sample of each
    entry (``-1`` marks truth or a deterministic field).
    """
    sample_ids = [0] * len(detections) if sample_ids is None else sample_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "sample_id", "core_x", "core_y", "ow_value", "area_km2"])
        for det, sid in zip(detections, sample_ids):
            for k in range(det.count):
                w.writerow([repr(float(det.time)), int(sid), repr(float(det.positions[k, 0])),
                            repr(float(det.positions[k, 1])), repr(float(det.ow_values[k])),
                            repr(float(det.sizes[k]))])
