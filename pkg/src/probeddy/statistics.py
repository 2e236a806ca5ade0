"""Probabilistic eddy statistics aggregated over an ensemble of detections.

An ensemble is a list over members of detection series (one
:class:`~probeddy.okubo_weiss.EddyDetection` per snapshot, all members on the
same time grid). The deterministic baseline is the same computation applied
to a one-member ensemble built from the posterior-mean field.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .tracking import TrackingConfig, catalog_all_tracks, periodic_distance, track_eddy

REPORT_SCHEMA = "probeddy-statistics"
REPORT_VERSION = 1


def _check_ensemble(ensemble):
    if not ensemble:
        raise InvalidParameterError("ensemble is empty")
    times = [d.time for d in ensemble[0]]
    for member in ensemble[1:]:
        if [d.time for d in member] != times:
            raise InvalidParameterError("ensemble members have different time grids")
    return np.array(times)


def _time_index(times, t):
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-6:
        raise InvalidParameterError(f"time {t} is not on the snapshot grid")
    return k


@dataclass
class CountStats:
    times: np.ndarray
    per_sample: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    deterministic: np.ndarray | None = None


def ensemble_counts(ensemble, deterministic=None):
    """Per-time mean and population standard deviation of eddy counts.

    ``deterministic`` is an optional detection series from the posterior-mean field.
    """
    times = _check_ensemble(ensemble)
    counts = np.array([[d.count for d in member] for member in ensemble], dtype=float)
    det = None
    if deterministic is not None:
        det = ensemble_counts([deterministic]).mean
    return CountStats(times, counts, counts.mean(axis=0), counts.std(axis=0), det)


@dataclass
class Occurrence:
    probability: float
    stderr: float
    n_samples: int
    hits: np.ndarray


def occurrence_probability(ensemble, time, location, radius=10.0):
    """Fraction of members with at least one core within ``radius`` of ``location``.

    The Monte Carlo standard error ``sqrt(p (1 - p) / N)`` is reported alongside.
    """
    if not radius > 0:
        raise InvalidParameterError("radius must be positive")
    times = _check_ensemble(ensemble)
    k = _time_index(times, time)
    hits = np.zeros(len(ensemble), dtype=bool)
    for s, member in enumerate(ensemble):
        det = member[k]
        if det.count:
            d = periodic_distance(det.positions, np.asarray(location, dtype=float), det.domain_size)
            hits[s] = bool(np.any(d <= radius))
    p = float(hits.mean())
    return Occurrence(p, float(np.sqrt(p * (1 - p) / len(hits))), len(hits), hits)


@dataclass
class Histogram:
    """Density-normalised histogram; ``empty`` marks that no value was available."""

    edges: np.ndarray
    density: np.ndarray
    values: np.ndarray

    @property
    def empty(self):
        return self.values.size == 0

    @property
    def mass(self):
        return float(np.sum(self.density * np.diff(self.edges))) if not self.empty else 0.0

    def to_dict(self):
        return {"edges": self.edges.tolist(), "density": self.density.tolist(),
                "n": int(self.values.size)}


MAX_BINS = 256


def _bin_count(v):
    """numpy's "auto" rule (min of Freedman-Diaconis and Sturges widths), capped.

    Uncapped, a tiny interquartile range next to an outlier asks for millions of bins.
    """
    n = v.size
    span = v.max() - v.min()
    sturges = span / (np.log2(n) + 1.0)
    q75, q25 = np.percentile(v, [75, 25])
    fd = 2.0 * (q75 - q25) * n ** (-1.0 / 3.0)
    width = min(fd, sturges) if fd else sturges
    k = int(np.ceil(span / width))
    return min(k, MAX_BINS)


def density_histogram(values, bins=None):
    """Histogram integrating to one; a single distinct value gives a unit-width point mass."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return Histogram(np.zeros(0), np.zeros(0), v)
    if bins is None:
        lo, hi = v.min(), v.max()
        if lo == hi:
            bins = np.array([lo - 0.5, hi + 0.5])
        else:
            bins = np.histogram_bin_edges(v, bins=_bin_count(v))
    dens, edges = np.histogram(v, bins=bins, density=True)
    return Histogram(edges, dens, v)


@dataclass
class LifetimeStats:
    lifetimes: np.ndarray
    occurrence_fraction: float
    histogram: Histogram
    tracks: list


def lifetime_distribution(ensemble, cfg: TrackingConfig, bins=None):
    """Lifetimes of the seeded eddy in every member.

    Members without a core near the seed count as non-occurrences and are
    excluded from the histogram.
    """
    _check_ensemble(ensemble)
    tracks = [track_eddy(member, cfg, sample_id=s) for s, member in enumerate(ensemble)]
    found = [t for t in tracks if t is not None]
    lifetimes = np.array([t.lifetime for t in found])
    return LifetimeStats(lifetimes, len(found) / len(ensemble), density_histogram(lifetimes, bins), tracks)


def climatological_lifetimes(ensemble, cfg: TrackingConfig, bins=None):
    """Lifetimes of all tracks in all members (free-run climatology)."""
    lifetimes = []
    for s, member in enumerate(ensemble):
        lifetimes.extend(t.lifetime for t in catalog_all_tracks(member, cfg, sample_id=s))
    lifetimes = np.array(lifetimes)
    return LifetimeStats(lifetimes, 1.0, density_histogram(lifetimes, bins), [])


@dataclass
class SizeStats:
    sizes: np.ndarray
    occurrence_fraction: float
    undefined: int
    histogram: Histogram


def size_distribution(ensemble, time, location, radius=10.0, bins=None):
    """Area (km^2) of the core nearest ``location`` within ``radius`` in each member.

    ``undefined`` counts members whose nearest core has no closed boundary.
    """
    times = _check_ensemble(ensemble)
    k = _time_index(times, time)
    sizes, found, undefined = [], 0, 0
    for member in ensemble:
        det = member[k]
        if not det.count:
            continue
        d = periodic_distance(det.positions, np.asarray(location, dtype=float), det.domain_size)
        i = int(np.argmin(d))
        if d[i] > radius:
            continue
        found += 1
        if np.isfinite(det.sizes[i]):
            sizes.append(det.sizes[i])
        else:
            undefined += 1
    sizes = np.array(sizes)
    return SizeStats(sizes, found / len(ensemble), undefined, density_histogram(sizes, bins))


def seed_eddies(truth_series, seed_time, n_seeds=3, min_separation=20.0):
    """Seed locations from the strongest truth cores at ``seed_time``.

    Cores are taken in order of increasing OW value, skipping any closer than
    ``min_separation`` km to an already chosen seed.
    """
    times = np.array([d.time for d in truth_series])
    det = truth_series[_time_index(times, seed_time)]
    chosen = []
    for i in np.argsort(det.ow_values, kind="stable"):
        p = det.positions[i]
        if all(periodic_distance(p, q, det.domain_size) >= min_separation for q in chosen):
            chosen.append(p)
        if len(chosen) == n_seeds:
            break
    return [tuple(map(float, p)) for p in chosen]


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else None


def statistics_report(counts: CountStats, truth_counts=None, seeds=()):
    """JSON-serialisable report.

    ``seeds`` is a sequence of dicts with keys ``eddy_id, time, location,
    occurrence, lifetime, size`` and optional ``truth_*``/``det_*`` values.
    """
    out = {
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "counts": {
            "times": counts.times.tolist(),
            "ens_mean": counts.mean.tolist(),
            "ens_sd": counts.sd.tolist(),
            "det_count": None if counts.deterministic is None else counts.deterministic.tolist(),
            "truth_count": None if truth_counts is None else list(map(float, truth_counts)),
        },
        "seeds": [],
    }
    for s in seeds:
        occ, lt, sz = s["occurrence"], s["lifetime"], s["size"]
        out["seeds"].append({
            "eddy_id": s["eddy_id"],
            "time": float(s["time"]),
            "location": list(map(float, s["location"])),
            "occurrence": {"probability": occ.probability, "stderr": occ.stderr, "n": occ.n_samples},
            "lifetime": {"occurrence_fraction": lt.occurrence_fraction,
                         "values": lt.lifetimes.tolist(), "histogram": lt.histogram.to_dict()},
            "size": {"occurrence_fraction": sz.occurrence_fraction, "undefined": sz.undefined,
                     "values": sz.sizes.tolist(), "histogram": sz.histogram.to_dict()},
            "truth_lifetime": _finite(s.get("truth_lifetime", np.nan)),
            "truth_size": _finite(s.get("truth_size", np.nan)),
            "det_lifetime": _finite(s.get("det_lifetime", np.nan)),
            "det_size": _finite(s.get("det_size", np.nan)),
        })
    return out


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
