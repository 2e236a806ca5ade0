"""Reproducible twin-experiment driver.

Stages and their persisted products (all inside the output directory)::

    calibrate   spectrum.json, climatology.json
    simulate    truth.ckpt, trajectories.csv, observations.csv
    assimilate  filter.ckpt, smoother.ckpt, smoother_mean.csv
    sample      samples.ckpt
    diagnose    detections.ckpt, eddy_catalog.csv, diagnostics.json
    track       tracks.ckpt, track_catalog.csv
    stats       statistics.json, counts.csv
    figures     fig_<id>.csv

Every stage reads only the files of earlier stages, so a stage can be rerun
from persisted intermediates. Random streams come from
``SeedSequence(master_seed, spawn_key=(stage_id, member))``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cg_assim import (
    CGModel,
    FilterResult,
    FloeOceanSystem,
    backward_pass,
    filter_forward,
)
from .errors import ConfigurationError, InvalidParameterError, MissingStageError
from .floes import (
    FloePaths,
    FloePhysical,
    FloeState,
    ObservationSeries,
    OceanPath,
    TruthRun,
    observe,
    ocean_forcing,
    simulate_truth,
    write_observations_csv,
    write_trajectories_csv,
)
from .okubo_weiss import EddyDetection, climatological_sigma_ow, detect_eddies, expected_ow, ow_field, write_eddy_catalog_csv
from .spectral_ocean import (
    ModeSet,
    SpectralOceanState,
    SpectrumSpec,
    calibrate,
    default_spectrum,
    equilibrium_sample,
    equilibrium_stats,
    read_spectrum,
    simulate_ou,
    write_spectrum,
)
from .statistics import (
    climatological_lifetimes,
    ensemble_counts,
    lifetime_distribution,
    occurrence_probability,
    seed_eddies,
    size_distribution,
    statistics_report,
    write_report,
)
from .tracking import TrackingConfig, catalog_all_tracks, track_eddy, write_track_catalog_csv

STAGES = ("calibrate", "simulate", "assimilate", "sample", "diagnose", "track", "stats", "figures")
STAGE_IDS = {"climatology": 1, "ocean": 2, "floes": 3, "observe": 4, "sample": 5, "free_run": 6}
FIGURE_IDS = ("counts", "occurrence", "lifetime", "size", "ow_fields", "modes")
FREE_ID = -3
TRUTH_ID = -2
MEAN_ID = -1

CKPT_MAGIC = b"PBCKPT\x00\x01"
CKPT_VERSION = 1


# -- configuration ----------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Effective experiment configuration; field names carry their units."""

    domain_size_km: float = 400.0
    duration_days: float = 100.0
    spinup_days: float = 20.0
    kmax: int = 11
    n_floes: int = 40
    obs_noise_km: float = 0.25
    angle_noise_rad: float = 0.01
    obs_interval_days: float = 0.1
    dt_days: float = 0.01
    record_interval_days: float = 1.0
    n_samples: int = 100
    grid_n: int = 128
    ow_threshold_factor: float = 0.2
    sigma_ow_mode: str = "climatological"
    climatology_draws: int = 20
    free_run_days: float = 200.0
    tracking_distance_km: float = 10.0
    search_distance_km: float = 10.0
    occurrence_radius_km: float = 10.0
    seed_time_days: float | None = None
    n_seeds: int = 3
    rms_speed_km_per_day: float = 8.0
    spectrum_slope: float = -4.0
    tcorr_max_days: float = 20.0
    tcorr_exponent: float = 0.5
    drift_speed_km_per_day: float = 1.0
    floe_thickness_m: float = 2.0
    rho_ice_kg_per_m3: float = 920.0
    rho_ocean_kg_per_m3: float = 1000.0
    ocean_drag_coeff: float = 3e-3
    floe_velocity_noise_km_per_day15: float = 1.0
    floe_spin_noise_rad_per_day15: float = 0.1
    prior_floe_jitter_km2_per_day2: float = 0.01
    drag_linearization: str = "frozen"
    master_seed: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def desk(cls, **overrides):
        """Reduced scale used by the acceptance suite."""
        base = dict(kmax=7, n_floes=16, duration_days=40.0, n_samples=50)
        base.update(overrides)
        return cls(**base)

    def validate(self):
        def positive(*names):
            for n in names:
                if not getattr(self, n) > 0:
                    raise ConfigurationError(f"{n} must be positive")

        positive("domain_size_km", "duration_days", "obs_noise_km", "angle_noise_rad",
                 "obs_interval_days", "dt_days", "record_interval_days", "tracking_distance_km",
                 "search_distance_km", "occurrence_radius_km", "rms_speed_km_per_day",
                 "tcorr_max_days", "floe_thickness_m", "rho_ice_kg_per_m3", "rho_ocean_kg_per_m3",
                 "ocean_drag_coeff", "ow_threshold_factor", "prior_floe_jitter_km2_per_day2")
        if self.spinup_days < 0 or self.free_run_days < 0:
            raise ConfigurationError("spinup_days and free_run_days must be non-negative")
        if self.kmax < 1 or self.n_floes < 0 or self.n_samples < 1 or self.n_seeds < 0:
            raise ConfigurationError("kmax >= 1, n_floes >= 0, n_samples >= 1, n_seeds >= 0 required")
        if self.grid_n < 2 * self.kmax + 2:
            raise ConfigurationError(f"grid_n={self.grid_n} aliases kmax={self.kmax}")
        if self.sigma_ow_mode not in ("climatological", "snapshot"):
            raise ConfigurationError("sigma_ow_mode must be 'climatological' or 'snapshot'")
        if self.drag_linearization not in ("frozen", "constant"):
            raise ConfigurationError("drag_linearization must be 'frozen' or 'constant'")
        for a, b in (("obs_interval_days", "dt_days"), ("record_interval_days", "obs_interval_days"),
                     ("duration_days", "record_interval_days"), ("spinup_days", "dt_days"),
                     ("free_run_days", "record_interval_days")):
            r = getattr(self, a) / getattr(self, b)
            if not np.isclose(r, round(r)):
                raise ConfigurationError(f"{a} must be a multiple of {b}")
        if self.floe_velocity_noise_km_per_day15 < 0 or self.floe_spin_noise_rad_per_day15 < 0:
            raise ConfigurationError("floe noise amplitudes must be non-negative")
        if self.seed_time_days is not None and not 0 <= self.seed_time_days <= self.duration_days:
            raise ConfigurationError("seed_time_days must lie in [0, duration_days]")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigurationError("master_seed must be a non-negative integer")

    @property
    def seed_time(self):
        if self.seed_time_days is not None:
            return float(self.seed_time_days)
        return float(round(0.7 * self.duration_days / self.record_interval_days) * self.record_interval_days)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def spectrum_spec(self):
        return SpectrumSpec(self.rms_speed_km_per_day, self.spectrum_slope, self.tcorr_max_days,
                            self.tcorr_exponent, self.drift_speed_km_per_day)

    def physical(self):
        return FloePhysical(self.floe_thickness_m, self.rho_ice_kg_per_m3, self.rho_ocean_kg_per_m3,
                            self.ocean_drag_coeff)

    def tracking(self):
        return TrackingConfig(self.tracking_distance_km, self.search_distance_km, self.record_interval_days)


def stage_seed(master_seed, stage, member=0):
    """Counter-based seed for ``(stage, member)``."""
    return np.random.SeedSequence(master_seed, spawn_key=(STAGE_IDS[stage], member))


def stage_rng(master_seed, stage, member=0):
    return np.random.default_rng(stage_seed(master_seed, stage, member))


# -- checkpoints -----------------------------------------------------------------------


def save_checkpoint(path, arrays, meta=None):
    """Flat binary checkpoint.

    Layout: magic (8 bytes), version and header length (two little-endian
    uint32), a JSON header listing ``name, dtype, shape, offset`` per array
    plus ``meta``, then the raw little-endian array bytes.
    """
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        b = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                        "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path, stage=None):
    path = Path(path)
    if not path.exists():
        raise MissingStageError(stage or "?", str(path))
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise InvalidParameterError(f"{path} is not a checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise InvalidParameterError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen))
        data = fh.read()
    arrays = {}
    for e in header["arrays"]:
        raw = data[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- manifest ------------------------------------------------------------------------


@dataclass
class RunManifest:
    out_dir: str
    config: dict
    config_hash: str
    code_version: str
    stages: dict

    @property
    def path(self):
        return Path(self.out_dir) / "manifest.json"

    def save(self):
        doc = {"out_dir": self.out_dir, "config": self.config, "config_hash": self.config_hash,
               "code_version": self.code_version, "stages": self.stages}
        self.path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, out_dir):
        p = Path(out_dir) / "manifest.json"
        if not p.exists():
            raise MissingStageError("all", str(p))
        d = json.loads(p.read_text())
        return cls(d["out_dir"], d["config"], d["config_hash"], d["code_version"], d["stages"])

    @classmethod
    def open(cls, out_dir, config: ExperimentConfig):
        p = Path(out_dir) / "manifest.json"
        if p.exists():
            m = cls.load(out_dir)
            if m.config_hash != config.hash():
                # a new configuration invalidates earlier stages
                m = cls(str(out_dir), config.to_dict(), config.hash(), __version__, {})
        else:
            m = cls(str(out_dir), config.to_dict(), config.hash(), __version__, {})
        m.out_dir = str(out_dir)
        return m

    def outputs(self):
        return {f["path"]: f["sha256"] for s in self.stages.values() for f in s.get("outputs", [])}


# -- parallel map ------------------------------------------------------------------------


def parallel_map(fn, items, workers=1):
    """Ordered map; ``workers > 1`` uses a process pool. Results never depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# -- stage helpers -------------------------------------------------------------------------


class Experiment:
    """Stage runner bound to one configuration and output directory."""

    def __init__(self, config: ExperimentConfig, out_dir, workers=1):
        self.cfg = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.workers = int(workers)
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")
        self.manifest = RunManifest.open(self.out, config)
        self.manifest.save()
        config.save(self.out / "config.json")

    def p(self, name):
        return self.out / name

    # bookkeeping

    def _run(self, stage, fn):
        t0 = time.perf_counter()
        rec = {"status": "running", "outputs": [], "seeds": {}}
        self.manifest.stages[stage] = rec
        try:
            outputs, seeds = fn()
        except Exception as exc:
            rec.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                       seconds=round(time.perf_counter() - t0, 3))
            self.manifest.save()
            raise
        rec.update(
            status="done",
            seconds=round(time.perf_counter() - t0, 3),
            outputs=[{"path": o, "sha256": sha256_file(self.p(o))} for o in outputs],
            seeds=seeds,
        )
        self.manifest.save()
        return rec

    def _seed_doc(self, stage, members=None):
        if members is None:
            return {stage: {"entropy": self.cfg.master_seed, "spawn_key": [STAGE_IDS[stage], 0]}}
        return {stage: {"entropy": self.cfg.master_seed, "spawn_key": [STAGE_IDS[stage], "member"],
                        "members": members}}

    # loaders

    def spectrum(self):
        if not self.p("spectrum.json").exists():
            raise MissingStageError("calibrate", str(self.p("spectrum.json")))
        modes, stats, L = read_spectrum(self.p("spectrum.json"))
        return modes, calibrate(stats), L

    def sigma_ow(self):
        p = self.p("climatology.json")
        if not p.exists():
            raise MissingStageError("calibrate", str(p))
        d = json.loads(p.read_text())
        return d["sigma_ow"] if self.cfg.sigma_ow_mode == "climatological" else None

    def model(self, n_floes=None):
        modes, params, L = self.spectrum()
        c = self.cfg
        return CGModel(
            modes, params, L, c.n_floes if n_floes is None else n_floes, c.physical(),
            c.obs_noise_km, c.angle_noise_rad, c.obs_interval_days, c.dt_days,
            c.floe_velocity_noise_km_per_day15, c.floe_spin_noise_rad_per_day15,
            c.drag_linearization, prior_floe_jitter=c.prior_floe_jitter_km2_per_day2,
        )

    def truth(self):
        a, meta = load_checkpoint(self.p("truth.ckpt"), "simulate")
        modes, _, L = self.spectrum()
        paths = FloePaths(a["floe_times"], a["floe_x"], a["floe_u"], a["floe_Omega"], a["floe_omega"], L)
        run = TruthRun(paths, a["snapshot_times"], a["snapshots"], modes, L)
        obs = ObservationSeries(a["obs_times"], a["obs_x"], a["obs_Omega"], meta["obs_noise_km"],
                                meta["angle_noise_rad"], L)
        return run, obs

    def filter_result(self):
        a, meta = load_checkpoint(self.p("filter.ckpt"), "assimilate")
        _, obs = self.truth()
        system = FloeOceanSystem(self.model(), obs)
        return FilterResult(a["times"], a["mu"], a["R"], a["record_steps"], system, meta["interventions"])

    def smoother(self):
        a, _ = load_checkpoint(self.p("smoother.ckpt"), "assimilate")
        return a

    def samples(self):
        a, meta = load_checkpoint(self.p("samples.ckpt"), "sample")
        return a, meta

    def detections(self):
        a, meta = load_checkpoint(self.p("detections.ckpt"), "diagnose")
        return _unpack_detections(a, meta)

    # stages

    def calibrate(self):
        def run():
            c = self.cfg
            modes = ModeSet.square(c.kmax)
            stats = default_spectrum(modes, c.domain_size_km, c.spectrum_spec())
            meta = {k: v for k, v in asdict(c.spectrum_spec()).items()}
            write_spectrum(self.p("spectrum.json"), modes, stats, c.domain_size_km, meta)
            params = calibrate(stats)
            draws = [
                equilibrium_sample(modes, params, stage_rng(c.master_seed, "climatology", i), c.domain_size_km)
                for i in range(c.climatology_draws)
            ]
            sig = climatological_sigma_ow(draws, c.grid_n) if draws else 0.0
            self.p("climatology.json").write_text(json.dumps(
                {"sigma_ow": sig, "draws": c.climatology_draws, "grid_n": c.grid_n}, indent=1, sort_keys=True) + "\n")
            return ["spectrum.json", "climatology.json"], self._seed_doc("climatology", c.climatology_draws)

        return self._run("calibrate", run)

    def simulate(self):
        def run():
            c = self.cfg
            modes, params, L = self.spectrum()
            rng = stage_rng(c.master_seed, "ocean")
            st = equilibrium_sample(modes, params, rng, L)
            n_spin = int(round(c.spinup_days / c.dt_days))
            if n_spin:
                _, cs = simulate_ou(st, params, c.dt_days, n_spin, rng, record_every=n_spin)
                st = st.with_coeffs(cs[-1], time=0.0)
            n_steps = int(round(c.duration_days / c.dt_days))
            times, coeffs = simulate_ou(st, params, c.dt_days, n_steps, rng)
            path = OceanPath(modes, times, coeffs, L)
            # each floe draws from its own stream, so subsets of floes agree across runs
            x0 = np.array([stage_rng(c.master_seed, "floes", l).uniform(0.0, L, 2) for l in range(c.n_floes)])
            x0 = x0.reshape(c.n_floes, 2)
            uo, zeta = ocean_forcing(st, x0)
            floes0 = FloeState(x0, uo, np.zeros(c.n_floes), 0.5 * zeta, 0.0)
            truth = simulate_truth(floes0, path, c.physical(), c.obs_interval_days, c.record_interval_days)
            obs = observe(truth.floes, c.obs_noise_km,
                          [stage_rng(c.master_seed, "observe", l) for l in range(c.n_floes)], c.angle_noise_rad)
            f = truth.floes
            save_checkpoint(self.p("truth.ckpt"), {
                "snapshot_times": truth.snapshot_times, "snapshots": truth.snapshots,
                "floe_times": f.times, "floe_x": f.x, "floe_u": f.u, "floe_Omega": f.Omega, "floe_omega": f.omega,
                "obs_times": obs.times, "obs_x": obs.x, "obs_Omega": obs.Omega,
            }, {"obs_noise_km": c.obs_noise_km, "angle_noise_rad": c.angle_noise_rad})
            write_trajectories_csv(self.p("trajectories.csv"), f)
            write_observations_csv(self.p("observations.csv"), obs)
            seeds = {**self._seed_doc("ocean"), **self._seed_doc("floes", c.n_floes),
                     **self._seed_doc("observe", c.n_floes)}
            return ["truth.ckpt", "trajectories.csv", "observations.csv"], seeds

        return self._run("simulate", run)

    def _write_smoother(self, sm):
        var = sm.variances()
        save_checkpoint(self.p("smoother.ckpt"), {"times": sm.times, "mu": sm.mu, "var": var})
        model = self.model()
        with open(self.p("smoother_mean.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "component_index", "mu", "var"])
            oc = model.ocean_slice
            for t in range(len(sm.times)):
                for i in range(sm.mu.shape[1]):
                    w.writerow([repr(float(sm.times[t])), i, repr(float(sm.mu[t, i])), repr(float(var[t, i]))])
        return ["smoother.ckpt", "smoother_mean.csv"]

    def _write_samples(self, draws):
        model = self.model()
        Y = draws.Y[:, :, model.ocean_slice]
        save_checkpoint(self.p("samples.ckpt"), {"times": draws.times, "ocean": Y},
                        {"n_samples": int(Y.shape[0])})
        return ["samples.ckpt"]

    def _sample_seed(self):
        return stage_seed(self.cfg.master_seed, "sample")

    def assimilate(self, with_samples=False):
        """Filter and smoother; with ``with_samples`` also the ensemble in the same backward sweep."""
        def run():
            _, obs = self.truth()
            fr = filter_forward(obs, self.model(), record_interval=self.cfg.record_interval_days)
            save_checkpoint(self.p("filter.ckpt"), {"times": fr.times, "mu": fr.mu, "R": fr.R,
                                                     "record_steps": fr.record_steps},
                            {"interventions": fr.interventions})
            n = self.cfg.n_samples if with_samples else 0
            sm, draws = backward_pass(fr, smoother=True, n_samples=n, rng=self._sample_seed())
            outputs = ["filter.ckpt"] + self._write_smoother(sm)
            if with_samples:
                self._samples_done = self._write_samples(draws)
            return outputs, {}

        rec = self._run("assimilate", run)
        if with_samples:
            self._run("sample", lambda: (self._samples_done, self._seed_doc("sample", self.cfg.n_samples)))
        return rec

    def sample(self):
        def run():
            fr = self.filter_result()
            _, draws = backward_pass(fr, smoother=False, n_samples=self.cfg.n_samples, rng=self._sample_seed())
            return self._write_samples(draws), self._seed_doc("sample", self.cfg.n_samples)

        return self._run("sample", run)

    def diagnose(self):
        def run():
            c = self.cfg
            modes, _, L = self.spectrum()
            truth, _ = self.truth()
            sm = self.smoother()
            smp, _ = self.samples()
            model = self.model()
            times = sm["times"]
            truth_idx = [int(np.argmin(np.abs(truth.snapshot_times - t))) for t in times]
            truth_c = truth.snapshots[truth_idx]
            mean_c = _real_to_complex(sm["mu"][:, model.ocean_slice])
            sample_c = _real_to_complex(smp["ocean"])
            sigma = self.sigma_ow()
            series = [truth_c, mean_c] + [sample_c[s] for s in range(sample_c.shape[0])]
            jobs = [(modes.half, L, times, cs, c.grid_n, sigma, c.ow_threshold_factor) for cs in series]
            free_t, free_c = self._free_run()
            jobs.append((modes.half, L, free_t, free_c, c.grid_n, sigma, c.ow_threshold_factor))
            results = parallel_map(_detect_series, jobs, self.workers)
            free = results.pop()
            arrays, meta = _pack_detections({FREE_ID: free[0]}, L)
            save_checkpoint(self.p("free_run.ckpt"), arrays, meta)
            dets = {TRUTH_ID: results[0][0], MEAN_ID: results[1][0]}
            for s in range(sample_c.shape[0]):
                dets[s] = results[2 + s][0]
            arrays, meta = _pack_detections(dets, L)
            save_checkpoint(self.p("detections.ckpt"), arrays, meta)
            flat, ids = [], []
            for sid in sorted(dets):
                for d in dets[sid]:
                    flat.append(d)
                    ids.append(sid)
            write_eddy_catalog_csv(self.p("eddy_catalog.csv"), flat, ids)
            k = int(np.argmin(np.abs(times - c.seed_time)))
            mean_sd = results[1][1]
            # OW fields at the seed time for the field figure
            st = lambda cs: SpectralOceanState(modes, cs, L, float(times[k]))
            members = [st(sample_c[s, k]) for s in range(sample_c.shape[0])]
            fields_ = {
                "truth": ow_field(st(truth_c[k]), c.grid_n, sigma, c.ow_threshold_factor).values,
                "posterior_mean": ow_field(st(mean_c[k]), c.grid_n, sigma, c.ow_threshold_factor).values,
                "sample0": ow_field(members[0], c.grid_n, sigma, c.ow_threshold_factor).values,
                "expected": (expected_ow(members, c.grid_n)["mean_field"] if len(members) > 1
                             else ow_field(members[0], c.grid_n).values),
            }
            save_checkpoint(self.p("ow_fields.ckpt"), fields_, {"time": float(times[k]), "spacing": L / c.grid_n})
            summary = {
                "times": times.tolist(),
                "sigma_ow": sigma,
                "posterior_mean_ow_sd": list(map(float, mean_sd)),
                "truth_ow_sd": list(map(float, results[0][1])),
                "posterior_mean_ow_sd_time_mean": float(np.mean(mean_sd)),
            }
            self.p("diagnostics.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
            outputs = ["detections.ckpt", "free_run.ckpt", "eddy_catalog.csv", "ow_fields.ckpt", "diagnostics.json"]
            return outputs, self._seed_doc("free_run")

        return self._run("diagnose", run)

    def _free_run(self):
        """Daily snapshots of an ocean-only free run for the lifetime climatology.

        With ``free_run_days = 0`` the truth run itself serves as the free run.
        """
        c = self.cfg
        modes, params, L = self.spectrum()
        if c.free_run_days == 0:
            truth, _ = self.truth()
            return truth.snapshot_times, truth.snapshots
        rng = stage_rng(c.master_seed, "free_run")
        st = equilibrium_sample(modes, params, rng, L)
        every = int(round(c.record_interval_days / c.dt_days))
        return simulate_ou(st, params, c.dt_days, int(round(c.free_run_days / c.dt_days)), rng, record_every=every)

    def free_run_detections(self):
        a, meta = load_checkpoint(self.p("free_run.ckpt"), "diagnose")
        return _unpack_detections(a, meta)[FREE_ID]

    def _seeds(self, dets):
        return seed_eddies(dets[TRUTH_ID], self.cfg.seed_time, self.cfg.n_seeds)

    def track(self):
        def run():
            dets = self.detections()
            tc = self.cfg.tracking()
            seeds = self._seeds(dets)
            rows = []
            tracks_all = []
            truth_tracks = catalog_all_tracks(dets[TRUTH_ID], tc, sample_id=TRUTH_ID)
            tracks_all.extend(truth_tracks)
            seeded = {}
            for e, loc in enumerate(seeds):
                cfg = tc.seeded(self.cfg.seed_time, loc)
                for sid in sorted(dets):
                    tr = track_eddy(dets[sid], cfg, sample_id=sid)
                    seeded[(e, sid)] = tr
                    rows.append((e, sid, tr))
            write_track_catalog_csv(self.p("track_catalog.csv"), truth_tracks)
            with open(self.p("seeded_tracks.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["eddy_id", "sample_id", "found", "birth_time", "death_time", "lifetime_days",
                            "mean_area_km2", "n_snapshots"])
                for e, sid, tr in rows:
                    if tr is None:
                        w.writerow([e, sid, 0, "", "", "", "", 0])
                    else:
                        w.writerow([e, sid, 1, repr(tr.birth_time), repr(tr.death_time), repr(tr.lifetime),
                                    repr(tr.mean_area), tr.n_snapshots])
            clim = [t.lifetime for t in catalog_all_tracks(self.free_run_detections(), tc, sample_id=FREE_ID)]
            save_checkpoint(self.p("tracks.ckpt"), {"climatology_lifetimes": np.array(clim, dtype=float),
                                                    "seeds": np.array(seeds, dtype=float).reshape(-1, 2)})
            return ["track_catalog.csv", "seeded_tracks.csv", "tracks.ckpt"], {}

        return self._run("track", run)

    def stats(self):
        def run():
            dets = self.detections()
            tc = self.cfg.tracking()
            a, _ = load_checkpoint(self.p("tracks.ckpt"), "track")
            seeds = [tuple(s) for s in a["seeds"].tolist()]
            members = [dets[s] for s in sorted(dets) if s >= 0]
            counts = ensemble_counts(members, deterministic=dets[MEAN_ID])
            truth_counts = ensemble_counts([dets[TRUTH_ID]]).mean
            t = self.cfg.seed_time
            r = self.cfg.occurrence_radius_km
            seed_docs = []
            for e, loc in enumerate(seeds):
                cfg = tc.seeded(t, loc)
                lt = lifetime_distribution(members, cfg)
                truth_lt = lifetime_distribution([dets[TRUTH_ID]], cfg)
                det_lt = lifetime_distribution([dets[MEAN_ID]], cfg)
                sz = size_distribution(members, t, loc, r)
                truth_sz = size_distribution([dets[TRUTH_ID]], t, loc, r)
                det_sz = size_distribution([dets[MEAN_ID]], t, loc, r)
                seed_docs.append({
                    "eddy_id": e, "time": t, "location": loc,
                    "occurrence": occurrence_probability(members, t, loc, r),
                    "lifetime": lt, "size": sz,
                    "truth_lifetime": truth_lt.lifetimes[0] if truth_lt.lifetimes.size else np.nan,
                    "det_lifetime": det_lt.lifetimes[0] if det_lt.lifetimes.size else np.nan,
                    "truth_size": truth_sz.sizes[0] if truth_sz.sizes.size else np.nan,
                    "det_size": det_sz.sizes[0] if det_sz.sizes.size else np.nan,
                })
            report = statistics_report(counts, truth_counts, seed_docs)
            clim = climatological_lifetimes([self.free_run_detections()], tc)
            report["climatology_lifetime"] = {"values": clim.lifetimes.tolist(), "histogram": clim.histogram.to_dict()}
            report["summary"] = {
                "truth_count_mean": float(np.mean(truth_counts)),
                "det_count_mean": float(np.mean(counts.deterministic)),
                "ens_count_mean": float(np.mean(counts.mean)),
                "n_samples": len(members),
            }
            write_report(self.p("statistics.json"), report)
            with open(self.p("counts.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["time", "truth_count", "det_count", "ens_mean", "ens_sd"])
                for k in range(len(counts.times)):
                    w.writerow([repr(float(counts.times[k])), repr(float(truth_counts[k])),
                                repr(float(counts.deterministic[k])), repr(float(counts.mean[k])),
                                repr(float(counts.sd[k]))])
            return ["statistics.json", "counts.csv"], {}

        return self._run("stats", run)

    def figures(self, ids=FIGURE_IDS):
        def run():
            outs = []
            for fid in ids:
                outs.extend(emit_figure_tables(self.out, fid))
            return outs, {}

        return self._run("figures", run)

    def run_all(self):
        self.calibrate()
        self.simulate()
        self.assimilate(with_samples=True)
        self.diagnose()
        self.track()
        self.stats()
        self.figures()
        return self.manifest


def _real_to_complex(y):
    y = np.asarray(y)
    return y[..., 0::2] + 1j * y[..., 1::2]


def _detect_series(job):
    """Detections and OW grid sd for one coefficient series (picklable worker)."""
    half, L, times, coeffs, n, sigma, factor = job
    modes = ModeSet(half)
    dets, sds = [], []
    for t, c in zip(times, coeffs):
        f = ow_field(SpectralOceanState(modes, c, L, float(t)), n, sigma, factor)
        dets.append(detect_eddies(f))
        sds.append(float(f.values.std()))
    return dets, sds


_FLAG_CODES = {"": 0, "wraps_domain": 1, "no_closed_contour": 2}


def _pack_detections(dets, L):
    rows = []
    thresholds = {}
    for sid in sorted(dets):
        for k, d in enumerate(dets[sid]):
            thresholds[f"{sid}:{k}"] = [float(d.time), float(d.threshold)]
            for i in range(d.count):
                rows.append((sid, k, d.positions[i, 0], d.positions[i, 1], d.indices[i, 0], d.indices[i, 1],
                             d.ow_values[i], d.sizes[i], _FLAG_CODES.get(d.flags[i], 3)))
    arr = np.array(rows, dtype=float).reshape(-1, 9)
    meta = {"domain_size": L, "series": {str(s): len(dets[s]) for s in sorted(dets)}, "snapshots": thresholds}
    return {"rows": arr}, meta


def _unpack_detections(arrays, meta):
    rows = arrays["rows"]
    inv = {v: k for k, v in _FLAG_CODES.items()}
    L = meta["domain_size"]
    out = {}
    for sid_s, n_t in meta["series"].items():
        sid = int(sid_s)
        sel = rows[rows[:, 0] == sid]
        series = []
        for k in range(n_t):
            r = sel[sel[:, 1] == k]
            t, thr = meta["snapshots"][f"{sid}:{k}"]
            series.append(EddyDetection(
                positions=r[:, 2:4].copy(), indices=r[:, 4:6].astype(np.int64), ow_values=r[:, 6].copy(),
                boundaries=[None] * len(r), sizes=r[:, 7].copy(), flags=[inv.get(int(f), "other") for f in r[:, 8]],
                time=t, threshold=thr, domain_size=L,
            ))
        out[sid] = series
    return out


# -- figure tables -------------------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _require(out, name, stage):
    p = Path(out) / name
    if not p.exists():
        raise MissingStageError(stage, str(p))
    return p


def emit_figure_tables(out_dir, figure_id):
    """Write plot-ready tables for one figure; returns the file names written."""
    out = Path(out_dir)
    if figure_id not in FIGURE_IDS:
        raise InvalidParameterError(f"unknown figure id {figure_id!r}; valid ids: {', '.join(FIGURE_IDS)}")
    if figure_id in ("counts", "occurrence", "lifetime", "size"):
        rep = json.loads(_require(out, "statistics.json", "stats").read_text())
    name = f"fig_{figure_id}.csv"
    if figure_id == "counts":
        c = rep["counts"]
        rows = zip(c["times"], c["truth_count"], c["det_count"], c["ens_mean"], c["ens_sd"])
        _write_csv(out / name, ["time", "truth_count", "det_count", "ens_mean", "ens_sd"], rows)
    elif figure_id == "occurrence":
        rows = [(s["eddy_id"], s["location"][0], s["location"][1], s["occurrence"]["probability"],
                 s["occurrence"]["stderr"]) for s in rep["seeds"]]
        _write_csv(out / name, ["eddy_id", "x", "y", "probability", "stderr"], rows)
    elif figure_id in ("lifetime", "size"):
        rows = []
        for s in rep["seeds"]:
            h = s[figure_id]["histogram"]
            for lo, hi, d in zip(h["edges"][:-1], h["edges"][1:], h["density"]):
                rows.append((s["eddy_id"], "ensemble", lo, hi, d))
            for kind in ("truth", "det"):
                v = s[f"{kind}_{figure_id}"]
                rows.append((s["eddy_id"], kind, "" if v is None else v, "", ""))
        if figure_id == "lifetime":
            h = rep["climatology_lifetime"]["histogram"]
            for lo, hi, d in zip(h["edges"][:-1], h["edges"][1:], h["density"]):
                rows.append(("climatology", "climatology", lo, hi, d))
        _write_csv(out / name, ["eddy_id", "kind", "bin_left", "bin_right", "density"], rows)
    elif figure_id == "ow_fields":
        a, meta = load_checkpoint(_require(out, "ow_fields.ckpt", "diagnose"), "diagnose")
        keys = ["truth", "posterior_mean", "sample0", "expected"]
        n = a["truth"].shape[0]
        h = meta["spacing"]
        rows = ((i * h, j * h, *(a[k][i, j] for k in keys)) for i in range(n) for j in range(n))
        _write_csv(out / name, ["x_km", "y_km"] + keys, rows)
    elif figure_id == "modes":
        _require(out, "spectrum.json", "calibrate")
        modes, _, L = read_spectrum(out / "spectrum.json")
        tr, _ = load_checkpoint(_require(out, "truth.ckpt", "simulate"), "simulate")
        sm, _ = load_checkpoint(_require(out, "smoother.ckpt", "assimilate"), "assimilate")
        nf = sm["mu"].shape[1] - modes.n_real
        rows = []
        for k, t in enumerate(sm["times"]):
            ti = int(np.argmin(np.abs(tr["snapshot_times"] - t)))
            for m, (k1, k2) in enumerate(modes.half.tolist()):
                c = tr["snapshots"][ti, m]
                p, q = nf + 2 * m, nf + 2 * m + 1
                rows.append((k1, k2, float(t), c.real, c.imag, sm["mu"][k, p], sm["mu"][k, q],
                             np.sqrt(sm["var"][k, p] + sm["var"][k, q])))
        _write_csv(out / name, ["k1", "k2", "time", "truth_re", "truth_im", "post_re", "post_im", "post_sd"], rows)
    return [name]


# -- public entry points -------------------------------------------------------------------


def run_twin_experiment(config: ExperimentConfig, out_dir, workers=1) -> RunManifest:
    """Run every stage of the twin experiment and return the manifest."""
    return Experiment(config, out_dir, workers).run_all()


def run_sparse_variant(config: ExperimentConfig, out_dir, n_floes=4, workers=1) -> RunManifest:
    """Same experiment observing only the first ``n_floes`` floes."""
    return run_twin_experiment(replace(config, n_floes=n_floes), out_dir, workers)
