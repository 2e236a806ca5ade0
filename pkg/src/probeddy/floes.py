"""Center-of-mass ice floe model driven by quadratic ocean drag.

Units are km and days throughout. The drag coefficient

    beta = d_o * rho_o / (h * rho_ice)       [1/m]  ->  * 1000  [1/km]

multiplies ``(u_o - u)|u_o - u|`` in (km/day)^2, giving km/day^2. The rotation
equation uses the same ``beta`` on ``(zeta/2 - omega)|zeta/2 - omega|``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameterError
from .spectral_ocean import SpectralOceanState, velocity_matrix

M_PER_KM = 1000.0


@dataclass(frozen=True)
class FloePhysical:
    thickness_m: float = 2.0
    rho_ice: float = 920.0
    rho_ocean: float = 1000.0
    drag_coeff: float = 3e-3

    def __post_init__(self):
        for name in ("thickness_m", "rho_ice", "rho_ocean", "drag_coeff"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")

    @property
    def beta(self):
        """Drag coefficient in 1/km."""
        return self.drag_coeff * self.rho_ocean / (self.thickness_m * self.rho_ice) * M_PER_KM


@dataclass(frozen=True)
class FloeState:
    """Positions (L, 2) km, velocities (L, 2) km/day, angle (L,) rad, spin (L,) rad/day."""

    x: np.ndarray
    u: np.ndarray
    Omega: np.ndarray
    omega: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "Omega", np.asarray(self.Omega, dtype=float).reshape(-1))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(-1))

    @property
    def n_floes(self):
        return self.x.shape[0]


def wrap(x, L):
    """Map positions into [0, L); ``np.mod`` alone returns L for tiny negative inputs."""
    r = np.mod(x, L)
    return np.where(r >= L, 0.0, r)


def ocean_forcing(ocean: SpectralOceanState, x, background=(0.0, 0.0)):
    """Ocean velocity (L, 2) and vorticity (L,) at floe positions."""
    gu, gv, gz = velocity_matrix(ocean.modes, x, ocean.domain_size)
    z = ocean.to_real()
    uo = np.stack([gu @ z, gv @ z], axis=-1) + np.asarray(background, dtype=float)
    return uo, gz @ z


def floe_step(state, ocean, phys, dt, background=(0.0, 0.0)):
    """One explicit Euler step of the center-of-mass floe equations.

    ``background`` is a uniform velocity added to the ocean field.
    """
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    L = ocean.domain_size
    uo, zeta = ocean_forcing(ocean, state.x, background)
    rel = uo - state.u
    speed = np.sqrt((rel**2).sum(axis=1))
    spin_rel = 0.5 * zeta - state.omega
    beta = phys.beta
    return FloeState(
        x=wrap(state.x + dt * state.u, L),
        u=state.u + dt * beta * rel * speed[:, None],
        Omega=state.Omega + dt * state.omega,
        omega=state.omega + dt * beta * spin_rel * np.abs(spin_rel),
        time=state.time + dt,
    )


def initial_floes(n_floes, ocean, rng):
    """Floes placed uniformly at random, initially co-moving with the ocean."""
    x = rng.uniform(0.0, ocean.domain_size, size=(n_floes, 2))
    uo, zeta = ocean_forcing(ocean, x)
    return FloeState(x, uo, np.zeros(n_floes), 0.5 * zeta, ocean.time)


@dataclass(frozen=True)
class OceanPath:
    """Ocean coefficients at every model step."""

    modes: object
    times: np.ndarray
    coeffs: np.ndarray
    domain_size: float

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def state(self, i):
        return SpectralOceanState(self.modes, self.coeffs[i], self.domain_size, float(self.times[i]))


@dataclass(frozen=True)
class FloePaths:
    """Recorded floe trajectories; arrays indexed (time, floe, ...)."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    Omega: np.ndarray
    omega: np.ndarray
    domain_size: float

    @property
    def n_floes(self):
        return self.x.shape[1]


@dataclass(frozen=True)
class TruthRun:
    floes: FloePaths
    snapshot_times: np.ndarray
    snapshots: np.ndarray  # (n_snap, n_pairs) complex
    modes: object
    domain_size: float

    def snapshot(self, i):
        return SpectralOceanState(
            self.modes, self.snapshots[i], self.domain_size, float(self.snapshot_times[i])
        )


def _every(interval, dt):
    k = int(round(interval / dt))
    if k < 1 or not np.isclose(k * dt, interval, rtol=1e-9, atol=1e-12):
        raise InvalidParameterError(f"interval {interval} is not a multiple of dt={dt}")
    return k


def simulate_truth(floes0, ocean_path, phys, record_interval, snapshot_interval=None,
                   background=(0.0, 0.0)):
    """Drive floes through a precomputed ocean path (one-way coupling).

    Floes are recorded every ``record_interval`` days and the ocean every
    ``snapshot_interval`` days (defaults to ``record_interval``).
    """
    dt = ocean_path.dt
    rec = _every(record_interval, dt)
    snap = _every(snapshot_interval or record_interval, dt)
    n_steps = len(ocean_path.times) - 1
    state = floes0
    xs, us, Os, os_, ts = [], [], [], [], []
    for s in range(n_steps + 1):
        if s % rec == 0:
            ts.append(ocean_path.times[s])
            xs.append(state.x)
            us.append(state.u)
            Os.append(state.Omega)
            os_.append(state.omega)
        if s == n_steps:
            break
        state = floe_step(state, ocean_path.state(s), phys, dt, background)
    snap_idx = np.arange(0, n_steps + 1, snap)
    paths = FloePaths(
        np.array(ts), np.array(xs), np.array(us), np.array(Os), np.array(os_),
        ocean_path.domain_size,
    )
    return TruthRun(
        paths, ocean_path.times[snap_idx], ocean_path.coeffs[snap_idx],
        ocean_path.modes, ocean_path.domain_size,
    )


@dataclass(frozen=True)
class ObservationSeries:
    """Noisy positions (n_obs, L, 2) and angles (n_obs, L) at increasing times."""

    times: np.ndarray
    x: np.ndarray
    Omega: np.ndarray
    noise_sd: float
    angle_noise_sd: float
    domain_size: float

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("observation times must be strictly increasing")
        if self.noise_sd < 0 or self.angle_noise_sd < 0:
            raise InvalidParameterError("noise standard deviations must be non-negative")

    @property
    def n_floes(self):
        return self.x.shape[1]

    @property
    def interval(self):
        return float(self.times[1] - self.times[0])

    def select(self, floes):
        """Observations of a subset of floes."""
        idx = np.asarray(floes, dtype=int)
        return replace(self, x=self.x[:, idx], Omega=self.Omega[:, idx])

    def increments(self):
        """Minimal-image position increments (n_obs-1, L, 2) and angle increments."""
        dx = np.diff(self.x, axis=0)
        L = self.domain_size
        dx = dx - L * np.round(dx / L)
        return dx, np.diff(self.Omega, axis=0)


def observe(paths: FloePaths, noise_sd, rng, angle_noise_sd=0.01):
    """Add i.i.d. Gaussian noise to recorded positions and angles.

    ``rng`` is one generator, or a sequence with one generator per floe so
    that a floe's noise does not depend on how many floes are observed.
    """
    if noise_sd < 0 or angle_noise_sd < 0:
        raise InvalidParameterError("noise standard deviations must be non-negative")
    T, L = paths.Omega.shape
    if isinstance(rng, (list, tuple)):
        if len(rng) != L:
            raise InvalidParameterError(f"need {L} generators, got {len(rng)}")
        ex = np.empty((T, L, 2))
        eO = np.empty((T, L))
        for l, g in enumerate(rng):
            ex[:, l] = g.standard_normal((T, 2))
            eO[:, l] = g.standard_normal(T)
    else:
        ex = rng.standard_normal(paths.x.shape)
        eO = rng.standard_normal(paths.Omega.shape)
    x = paths.x + noise_sd * ex
    Om = paths.Omega + angle_noise_sd * eO
    return ObservationSeries(
        paths.times.copy(), wrap(x, paths.domain_size), Om,
        float(noise_sd), float(angle_noise_sd), paths.domain_size,
    )


def write_trajectories_csv(path, paths: FloePaths):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["floe_id", "time", "x", "y", "u", "v", "Omega", "omega"])
        for l in range(paths.n_floes):
            for t in range(len(paths.times)):
                w.writerow([
                    l, repr(float(paths.times[t])),
                    repr(float(paths.x[t, l, 0])), repr(float(paths.x[t, l, 1])),
                    repr(float(paths.u[t, l, 0])), repr(float(paths.u[t, l, 1])),
                    repr(float(paths.Omega[t, l])), repr(float(paths.omega[t, l])),
                ])


def write_observations_csv(path, obs: ObservationSeries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["floe_id", "time", "x_obs", "y_obs", "Omega_obs"])
        for l in range(obs.n_floes):
            for t in range(len(obs.times)):
                w.writerow([
                    l, repr(float(obs.times[t])), repr(float(obs.x[t, l, 0])),
                    repr(float(obs.x[t, l, 1])), repr(float(obs.Omega[t, l])),
                ])


def read_observations_csv(path, noise_sd, angle_noise_sd, domain_size):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    floes = sorted({int(r["floe_id"]) for r in rows})
    times = sorted({float(r["time"]) for r in rows})
    ti = {t: i for i, t in enumerate(times)}
    li = {f: i for i, f in enumerate(floes)}
    x = np.full((len(times), len(floes), 2), np.nan)
    Om = np.full((len(times), len(floes)), np.nan)
    for r in rows:
        t, l = ti[float(r["time"])], li[int(r["floe_id"])]
        x[t, l] = float(r["x_obs"]), float(r["y_obs"])
        Om[t, l] = float(r["Omega_obs"])
    return ObservationSeries(np.array(times), x, Om, noise_sd, angle_noise_sd, domain_size)
