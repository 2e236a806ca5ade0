"""Conditional-Gaussian Lagrangian data assimilation for floes in a spectral ocean.

Observed variables ``X`` are floe positions and angles; unobserved variables
``Y`` are floe velocities, floe spins and the ocean real coordinates::

    Y = [u_1x, u_1y, ..., u_Lx, u_Ly, omega_1, ..., omega_L, Re c_0, Im c_0, ...]
    X = [x_1x, x_1y, ..., x_Lx, x_Ly, Omega_1, ..., Omega_L]

    dX/dt = A0 + A1 Y + B dW_X/dt
    dY/dt = a0 + a1 Y + b dW_Y/dt

The quadratic drag is replaced by a linear drag ``beta * s * (u_o(x_obs) - u)``
with a frozen speed ``s`` per floe, which keeps ``a1`` a function of the
observations only. Filter moments are integrated forward with RK4 substeps,
the smoother moments backward with RK4 over pairs of substeps, and posterior
trajectories are drawn with the backward sampling SDE (Euler-Maruyama).

The backward pass never holds the whole filter history at substep
resolution: the forward pass stores checkpoints at the record cadence and
each record interval is replayed (bit-identically) when it is needed.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, InvalidParameterError, NumericalInstabilityError
from .floes import FloePhysical, ObservationSeries
from .spectral_ocean import ModeSet, OUModeParams, SpectralOceanState, equilibrium_stats, velocity_matrix

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-12
PSD_TOLERANCE = 1e-8


class FloeOceanDrift:
    """Structured form of ``a1`` for the floe-ocean system.

    Rows of the ``nf`` floe variables hold a diagonal damping plus a dense
    coupling ``C`` to the ocean coordinates; ocean rows are independent 2x2
    OU blocks. Applying it costs far less than a general sparse product.
    """

    def __init__(self, diag, C, a, phi):
        self.diag = np.asarray(diag, dtype=float)
        self.C = np.asarray(C, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.phi = np.asarray(phi, dtype=float)
        self.nf = self.diag.shape[0]

    def __matmul__(self, X):
        nf = self.nf
        col = (lambda v: v) if X.ndim == 1 else (lambda v: v[:, None])
        out = np.empty(X.shape)
        if nf:
            out[:nf] = col(self.diag) * X[:nf] + self.C @ X[nf:]
        p, q = X[nf::2], X[nf + 1 :: 2]
        a, phi = col(self.a), col(self.phi)
        out[nf::2] = -a * p - phi * q
        out[nf + 1 :: 2] = phi * p - a * q
        return out


@dataclass
class CGMatrices:
    """Coefficients of the conditionally linear system on one assimilation step.

    ``B`` and ``b`` are diagonal and stored as vectors; ``a1`` is sparse.
    ``drift`` (a fast operator equal to ``a1``) and ``obs_index`` (the
    columns selected when ``A1`` is a selection matrix) are optional
    accelerations used by the integrators.
    """

    A0: np.ndarray
    A1: np.ndarray
    B_diag: np.ndarray
    a0: np.ndarray
    a1: sp.csr_matrix
    b_diag: np.ndarray
    speeds: np.ndarray | None = None
    spin_speeds: np.ndarray | None = None
    flags: tuple = ()
    drift: object = None
    obs_index: np.ndarray | None = None

    def apply_a1(self, X):
        return self.drift @ X if self.drift is not None else self.a1 @ X

    def obs_columns(self, R):
        """``R A1*``."""
        return R[:, self.obs_index] if self.obs_index is not None else R @ self.A1.T

    def observe(self, y):
        """``A1 y``."""
        return y[self.obs_index] if self.obs_index is not None else self.A1 @ y

    @property
    def B(self):
        return np.diag(self.B_diag)

    @property
    def b(self):
        return np.diag(self.b_diag)

    @property
    def obs_precision(self):
        return 1.0 / self.B_diag**2

    @property
    def Q(self):
        return self.b_diag**2


@dataclass(frozen=True)
class CGModel:
    """Coupled floe-ocean forecast model used by the assimilation.

    ``drag="frozen"`` sets each floe's drag speed to the filter's RMS relative
    speed ``sqrt(E|u_o(x) - u|^2)`` at the start of every assimilation step.
    ``drag="constant"`` uses ``constant_speed`` for all floes (a linear system).
    """

    modes: ModeSet
    params: OUModeParams
    domain_size: float = 400.0
    n_floes: int = 0
    phys: FloePhysical = field(default_factory=FloePhysical)
    obs_noise: float = 0.25
    angle_noise: float = 0.01
    obs_interval: float = 0.1
    dt: float = 0.01
    floe_velocity_noise: float = 1.0
    floe_spin_noise: float = 0.1
    drag: str = "frozen"
    constant_speed: float = 1.0
    constant_spin_speed: float = 0.1
    min_speed: float = 1e-3
    prior_floe_jitter: float = 0.01

    def __post_init__(self):
        if self.drag not in ("frozen", "constant"):
            raise ConfigurationError(f"unknown drag linearisation {self.drag!r}")
        if self.n_floes > 0 and not (self.obs_noise > 0 and self.angle_noise > 0):
            raise ConfigurationError("observation noise must be positive (B B* must be invertible)")
        n_sub = self.obs_interval / self.dt
        if not np.isclose(n_sub, round(n_sub)) or round(n_sub) < 1:
            raise ConfigurationError("obs_interval must be a multiple of dt")

    @property
    def n_sub(self):
        return int(round(self.obs_interval / self.dt))

    @property
    def n_obs_vars(self):
        return 3 * self.n_floes

    @property
    def dim(self):
        return 3 * self.n_floes + self.modes.n_real

    @property
    def ocean_slice(self):
        return slice(3 * self.n_floes, self.dim)

    def ocean_state(self, y, time=0.0):
        return SpectralOceanState.from_real(self.modes, np.asarray(y)[self.ocean_slice], self.domain_size, time)

    def position_noise(self):
        """Diffusion of the observed increments.

        Differencing positions with i.i.d. errors ``sd`` over ``dt_obs`` gives
        increment variance ``2 sd^2``, i.e. ``B^2 = 2 sd^2 / dt_obs``.
        """
        return np.sqrt(2.0 / self.obs_interval) * self.obs_noise, np.sqrt(2.0 / self.obs_interval) * self.angle_noise


def _ocean_blocks(modes, params):
    """Rows, cols, values of the 2x2 OU blocks acting on (Re c, Im c)."""
    K = modes.n_pairs
    a, phi = params.a, params.phi
    p = 2 * np.arange(K)
    q = p + 1
    rows = np.concatenate([p, p, q, q])
    cols = np.concatenate([p, q, p, q])
    vals = np.concatenate([-a, -phi, phi, -a])
    return rows, cols, vals


def frozen_speeds(model, x_obs, mu, R):
    """RMS relative floe-ocean speed and spin mismatch under ``N(mu, R)``."""
    L = model.n_floes
    oc = model.ocean_slice
    gu, gv, gz = velocity_matrix(model.modes, x_obs, model.domain_size)
    mz = mu[oc]
    Rzz = R[oc, oc]
    ix = 2 * np.arange(L)
    iy = ix + 1
    iw = 2 * L + np.arange(L)

    def second_moment(G, idx, scale=1.0):
        G = scale * G
        mean = G @ mz - mu[idx]
        var = (
            np.einsum("lk,lk->l", G @ Rzz, G)
            - 2.0 * np.einsum("lk,kl->l", G, R[oc, idx])
            + R[idx, idx]
        )
        return mean**2 + np.maximum(var, 0.0)

    s = np.sqrt(second_moment(gu, ix) + second_moment(gv, iy))
    sw = np.sqrt(second_moment(gz, iw, 0.5))
    return s, sw


def build_cg_matrices(model: CGModel, x_obs, mu=None, R=None, t=0.0):
    """Assemble the conditionally linear coefficients at observed positions ``x_obs``.

    ``mu``/``R`` (the current filter moments) are needed only for
    ``drag="frozen"``.
    """
    L = model.n_floes
    K = model.modes.n_pairs
    n = model.dim
    oc0 = 3 * L
    beta = model.phys.beta
    flags = []
    x_obs = np.asarray(x_obs, dtype=float).reshape(L, 2)
    if np.any(~np.isfinite(x_obs)):
        raise InvalidParameterError(f"missing observation at t={t}")

    if L == 0:
        s = sw = np.zeros(0)
    elif model.drag == "constant":
        s = np.full(L, model.constant_speed)
        sw = np.full(L, model.constant_spin_speed)
    else:
        if mu is None or R is None:
            raise InvalidParameterError("frozen drag needs the current filter moments")
        s, sw = frozen_speeds(model, x_obs, mu, R)
        if np.any(s < model.min_speed) or np.any(sw < model.min_speed):
            flags.append("speed_floor")
        s = np.maximum(s, model.min_speed)
        sw = np.maximum(sw, model.min_speed)

    rows, cols, vals = [], [], []
    diag = np.concatenate([np.repeat(-beta * s, 2), -beta * sw])
    C = np.zeros((3 * L, 2 * K))
    if L:
        gu, gv, gz = velocity_matrix(model.modes, x_obs, model.domain_size)
        C[0 : 2 * L : 2] = beta * s[:, None] * gu
        C[1 : 2 * L : 2] = beta * s[:, None] * gv
        C[2 * L :] = 0.5 * beta * sw[:, None] * gz
        ocols = oc0 + np.arange(2 * K)
        for l in range(L):
            for comp, G in ((0, gu), (1, gv)):
                r = 2 * l + comp
                rows.append(np.full(2 * K + 1, r))
                cols.append(np.concatenate([[r], ocols]))
                vals.append(np.concatenate([[-beta * s[l]], beta * s[l] * G[l]]))
            r = 2 * L + l
            rows.append(np.full(2 * K + 1, r))
            cols.append(np.concatenate([[r], ocols]))
            vals.append(np.concatenate([[-beta * sw[l]], 0.5 * beta * sw[l] * gz[l]]))
    orow, ocol, oval = _ocean_blocks(model.modes, model.params)
    rows.append(oc0 + orow)
    cols.append(oc0 + ocol)
    vals.append(oval)
    a1 = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )

    a0 = np.zeros(n)
    a0[oc0::2] = model.params.f.real
    a0[oc0 + 1 :: 2] = model.params.f.imag

    b = np.empty(n)
    b[: 2 * L] = model.floe_velocity_noise
    b[2 * L : 3 * L] = model.floe_spin_noise
    b[oc0::2] = model.params.sigma / np.sqrt(2.0)
    b[oc0 + 1 :: 2] = model.params.sigma / np.sqrt(2.0)

    A1 = np.zeros((3 * L, n))
    A1[:, : 3 * L] = np.eye(3 * L)
    bx, bw = model.position_noise()
    B = np.concatenate([np.full(2 * L, bx), np.full(L, bw)])
    drift = FloeOceanDrift(diag, C, model.params.a, model.params.phi)
    return CGMatrices(np.zeros(3 * L), A1, B, a0, a1, b, s, sw, tuple(flags), drift, np.arange(3 * L))


# -- Gaussian posteriors -----------------------------------------------------------


@dataclass
class GaussianPosterior:
    """Means (n_t, n) and covariances (n_t, n, n) on an increasing time grid."""

    times: np.ndarray
    mu: np.ndarray
    R: np.ndarray

    def variances(self):
        return np.einsum("tii->ti", self.R)

    def at(self, i):
        return self.mu[i], self.R[i]


def write_posterior_csv(path, post: GaussianPosterior):
    """Rows of ``(time, component_index, mu, var)``."""
    var = post.variances()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "component_index", "mu", "var"])
        for t in range(len(post.times)):
            for i in range(post.mu.shape[1]):
                w.writerow([repr(float(post.times[t])), i, repr(float(post.mu[t, i])), repr(float(var[t, i]))])


# -- systems -------------------------------------------------------------------------


class FloeOceanSystem:
    """Observation-driven CG system for the floe-ocean model."""

    def __init__(self, model: CGModel, obs: ObservationSeries):
        if obs.n_floes != model.n_floes:
            raise ConfigurationError(f"model has {model.n_floes} floes, observations {obs.n_floes}")
        if model.n_floes and not np.isclose(obs.interval, model.obs_interval):
            raise ConfigurationError("observation cadence differs from model.obs_interval")
        if np.any(~np.isclose(np.diff(obs.times), model.obs_interval)):
            raise ConfigurationError("observation times must be uniformly spaced")
        self.model = model
        self.obs = obs
        self.times = np.asarray(obs.times, dtype=float)
        self.dt = model.dt
        self.n_sub = model.n_sub
        self.dim = model.dim
        dx, dO = obs.increments()
        L = model.n_floes
        self._rates = np.concatenate([dx.reshape(len(dx), 2 * L), dO], axis=1) / model.obs_interval

    def matrices(self, j, mu, R):
        return build_cg_matrices(self.model, self.obs.x[j], mu, R, self.times[j])

    def rate(self, j):
        return self._rates[j]


class LinearCGSystem:
    """CG system with user-supplied matrices per assimilation step.

    ``matrices_fn(j)`` returns the :class:`CGMatrices` of step ``j``;
    ``rates[j]`` is the realised ``dX/dt`` on that step.
    """

    def __init__(self, times, rates, matrices_fn, dt):
        self.times = np.asarray(times, dtype=float)
        self.dt = dt
        n_sub = (self.times[1] - self.times[0]) / dt
        if not np.isclose(n_sub, round(n_sub)):
            raise ConfigurationError("assimilation step must be a multiple of dt")
        self.n_sub = int(round(n_sub))
        self._rates = np.asarray(rates, dtype=float)
        self._fn = matrices_fn
        self.dim = matrices_fn(0).a1.shape[0]

    def matrices(self, j, mu, R):
        return self._fn(j)

    def rate(self, j):
        return self._rates[j]


# -- filter --------------------------------------------------------------------------


def _filter_rhs(m, z, mu, R):
    RA = m.obs_columns(R)
    P = m.apply_a1(R)
    innov = z - (m.A0 + m.observe(mu))
    w = m.obs_precision
    dmu = m.a0 + m.apply_a1(mu) + RA @ (w * innov)
    dR = P + P.T - (RA * w) @ RA.T
    dR[np.diag_indices_from(dR)] += m.Q
    return dmu, dR


def _filter_substep(m, z, mu, R, dt):
    k1m, k1R = _filter_rhs(m, z, mu, R)
    k2m, k2R = _filter_rhs(m, z, mu + 0.5 * dt * k1m, R + 0.5 * dt * k1R)
    k3m, k3R = _filter_rhs(m, z, mu + 0.5 * dt * k2m, R + 0.5 * dt * k2R)
    k4m, k4R = _filter_rhs(m, z, mu + dt * k3m, R + dt * k3R)
    mu = mu + (dt / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
    R = R + (dt / 6.0) * (k1R + 2.0 * k2R + 2.0 * k3R + k4R)
    return mu, 0.5 * (R + R.T)


def condition_covariance(R, time=None):
    """Symmetrise and floor eigenvalues at ``EIG_FLOOR * max``.

    A successful Cholesky factorisation is taken as proof of positive
    definiteness and leaves ``R`` untouched apart from symmetrisation.
    """
    R = 0.5 * (R + R.T)
    if R.size == 0:
        return R, False
    try:
        np.linalg.cholesky(R)
        return R, False
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(R)
    top = max(w.max(), 0.0)
    if w.min() < -PSD_TOLERANCE * max(top, 1e-300):
        raise NumericalInstabilityError(
            f"covariance indefinite (min eigenvalue {w.min():.3g}, max {top:.3g})", time
        )
    w = np.maximum(w, EIG_FLOOR * top)
    log.info("covariance eigenvalue floor applied at t=%s", time)
    R = (V * w) @ V.T
    return 0.5 * (R + R.T), True


STIFFNESS_TARGET = 0.25


def _refinement(system, m, R):
    """Substep refinement so that RK4 stays accurate on stiff intervals.

    Two rates are bounded: the filter's observation relaxation, the largest
    eigenvalue of ``W^1/2 A1 R A1* W^1/2`` with ``W = (B B*)^-1`` (entering the
    Riccati equation twice), and the backward gain ``b b* R^-1``. Both are
    large only while the covariance is far from its observed equilibrium,
    typically the first assimilation step after the prior.
    """
    rates = [0.0]
    if m.A1.size:
        sw = np.sqrt(m.obs_precision)
        S = (sw[:, None] * m.observe(m.obs_columns(R)).T) * sw[None, :]
        rates.append(2.0 * float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1]))
    q = m.Q
    if np.any(q > 0):
        # largest eigenvalue of Q^1/2 R^-1 Q^1/2 = 1 / smallest of Q^-1/2 R Q^-1/2
        iq = 1.0 / np.sqrt(np.where(q > 0, q, q[q > 0].min()))
        low = sla.eigh(iq[:, None] * R * iq[None, :], eigvals_only=True, subset_by_index=[0, 0],
                       check_finite=False)[0]
        rates.append(1.0 / max(low, 1e-300))
    return max(1, int(np.ceil(max(rates) * system.dt / STIFFNESS_TARGET)))


def _assimilation_step(system, j, mu, R, keep_substeps=False):
    m = system.matrices(j, mu, R)
    z = system.rate(j)
    refine = _refinement(system, m, R)
    dt = system.dt / refine
    subs = [(mu, R)] if keep_substeps else None
    for _ in range(system.n_sub * refine):
        mu, R = _filter_substep(m, z, mu, R, dt)
        if keep_substeps:
            subs.append((mu, R))
    t_end = system.times[j + 1]
    R, floored = condition_covariance(R, t_end)
    if keep_substeps:
        subs[-1] = (mu, R)
    return mu, R, m, floored, subs, dt


@dataclass
class FilterResult(GaussianPosterior):
    """Filter moments at record times plus what is needed to replay them.

    ``record_steps[r]`` is the assimilation step index of record ``r``.
    """

    record_steps: np.ndarray = None
    system: object = None
    interventions: list = field(default_factory=list)

    def replay(self, r):
        """Re-run the filter from record ``r`` to ``r + 1``.

        Returns a list, one entry per assimilation step, of
        ``(matrices, [(mu, R) at each substep including both ends], substep)``.
        """
        mu, R = self.mu[r].copy(), self.R[r].copy()
        out = []
        for j in range(self.record_steps[r], self.record_steps[r + 1]):
            mu, R, m, _, subs, dt = _assimilation_step(self.system, j, mu, R, keep_substeps=True)
            out.append((m, subs, dt))
        return out


def run_filter(system, mu0, R0, record_every=1):
    """Integrate the filter over every assimilation step of ``system``.

    Moments are recorded at step 0, every ``record_every`` steps and at the end.
    """
    n_steps = len(system.times) - 1
    mu = np.array(mu0, dtype=float)
    R, _ = condition_covariance(np.array(R0, dtype=float), system.times[0])
    rec_steps = [0]
    mus, Rs = [mu.copy()], [R.copy()]
    interventions = []
    for j in range(n_steps):
        mu, R, m, floored, _, _ = _assimilation_step(system, j, mu, R)
        if floored:
            interventions.append(float(system.times[j + 1]))
        if (j + 1) % record_every == 0 or j + 1 == n_steps:
            rec_steps.append(j + 1)
            mus.append(mu.copy())
            Rs.append(R.copy())
    rec_steps = np.array(rec_steps)
    return FilterResult(
        times=system.times[rec_steps],
        mu=np.array(mus),
        R=np.array(Rs),
        record_steps=rec_steps,
        system=system,
        interventions=interventions,
    )


def equilibrium_prior(model: CGModel, x0=None):
    """Equilibrium ocean prior with floe velocities slaved to the ocean at ``x0``."""
    st = equilibrium_stats(model.params)
    L = model.n_floes
    n = model.dim
    oc = model.ocean_slice
    mz = np.empty(model.modes.n_real)
    mz[0::2] = st.mean.real
    mz[1::2] = st.mean.imag
    Pz = np.repeat(st.variance / 2.0, 2)
    mu = np.zeros(n)
    R = np.zeros((n, n))
    mu[oc] = mz
    R[oc, oc] = np.diag(Pz)
    if L:
        gu, gv, gz = velocity_matrix(model.modes, np.asarray(x0).reshape(L, 2), model.domain_size)
        G = np.zeros((3 * L, model.modes.n_real))
        G[0 : 2 * L : 2] = gu
        G[1 : 2 * L : 2] = gv
        G[2 * L :] = 0.5 * gz
        mu[: 3 * L] = G @ mz
        GP = G * Pz
        R[: 3 * L, : 3 * L] = GP @ G.T + model.prior_floe_jitter * np.eye(3 * L)
        R[: 3 * L, oc] = GP
        R[oc, : 3 * L] = GP.T
    return mu, R


def filter_forward(obs: ObservationSeries, model: CGModel, prior=None, record_interval=1.0):
    """Run the CG filter on floe observations.

    ``prior`` is ``(mu0, R0)``; by default the equilibrium prior at the first
    observed positions. Moments are stored every ``record_interval`` days.
    """
    system = FloeOceanSystem(model, obs)
    if prior is None:
        prior = equilibrium_prior(model, obs.x[0] if model.n_floes else None)
    every = record_interval / model.obs_interval
    if not np.isclose(every, round(every)) or round(every) < 1:
        raise ConfigurationError("record_interval must be a multiple of obs_interval")
    return run_filter(system, prior[0], prior[1], int(round(every)))


# -- smoother and backward sampling ----------------------------------------------------


def _gain(R, q, time=None):
    """``diag(q) R^{-1}`` with an eigenvalue-floored fallback."""
    n = R.shape[0]
    if not np.any(q):
        return np.zeros((n, n))
    try:
        c = sla.cho_factor(R, lower=True, check_finite=False)
        inv = sla.cho_solve(c, np.eye(n), check_finite=False)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (R + R.T))
        top = max(w.max(), 0.0)
        if top <= 0:
            raise NumericalInstabilityError("filter covariance is singular", time)
        warnings.warn(f"regularised filter covariance inverse at t={time}", RuntimeWarning)
        w = np.maximum(w, EIG_FLOOR * top)
        inv = (V / w) @ V.T
    return q[:, None] * inv


def _smoother_rhs(m, K, muf, mus, Rs):
    dmu = -m.a0 - m.apply_a1(mus) + K @ (muf - mus)
    MR = m.apply_a1(Rs) + K @ Rs
    dR = -MR - MR.T
    dR[np.diag_indices_from(dR)] += m.Q
    return dmu, dR


def _sampler_drift(m, K, muf, Y):
    return -m.a0[:, None] - m.apply_a1(Y) + K @ (muf[:, None] - Y)


@dataclass
class PosteriorSamples:
    """Backward-sampled trajectories ``Y`` (n_samples, n_times, n)."""

    times: np.ndarray
    Y: np.ndarray
    seeds: list

    @property
    def n_samples(self):
        return self.Y.shape[0]


def member_rngs(seed, n, offset=0):
    """Independent generators for members ``offset .. offset+n-1``.

    Member ``i`` uses ``SeedSequence(entropy, spawn_key=key + (i,))``, so a
    member's stream does not depend on how many members are drawn.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seqs = [
        np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (offset + i,))
        for i in range(n)
    ]
    return [np.random.default_rng(s) for s in seqs], seqs


def _psd_sqrt(R):
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (R + R.T))
        return V * np.sqrt(np.maximum(w, 0.0))


def backward_pass(fres: FilterResult, smoother=True, n_samples=0, rng=None):
    """One backward sweep computing the smoother and/or posterior samples.

    Returns ``(GaussianPosterior or None, PosteriorSamples or None)``. Filter
    inverses are computed once per substep and shared by all samples.
    """
    system = fres.system
    nrec = len(fres.times)
    n = fres.mu.shape[1]
    mus = fres.mu[-1].copy()
    Rs = fres.R[-1].copy()
    s_mu = np.empty_like(fres.mu)
    s_R = np.empty_like(fres.R) if smoother else None
    if smoother:
        s_mu[-1], s_R[-1] = mus, Rs

    rngs, seqs = ([], [])
    Y = None
    samples = None
    if n_samples:
        rngs, seqs = member_rngs(rng if rng is not None else 0, n_samples)
        C = _psd_sqrt(fres.R[-1])
        xi = np.stack([g.standard_normal(n) for g in rngs], axis=1)
        Y = fres.mu[-1][:, None] + C @ xi
        samples = np.empty((n_samples, nrec, n))
        samples[:, -1] = Y.T

    for r in range(nrec - 2, -1, -1):
        steps = fres.replay(r)
        n_inner = sum(len(subs) - 1 for _, subs, _ in steps)
        noise = None
        if n_samples:
            noise = np.stack([g.standard_normal((n_inner, n)) for g in rngs], axis=2)
        k = n_inner
        for m, subs, dt in reversed(steps):
            q = m.Q
            gains = [None] * len(subs)

            def gain(i):
                if gains[i] is None:
                    gains[i] = _gain(subs[i][1], q)
                return gains[i]

            last = len(subs) - 1
            if smoother:
                i = last
                while i > 0:
                    if i >= 2:
                        h = 2 * dt
                        k1m, k1R = _smoother_rhs(m, gain(i), subs[i][0], mus, Rs)
                        k2m, k2R = _smoother_rhs(m, gain(i - 1), subs[i - 1][0], mus + 0.5 * h * k1m, Rs + 0.5 * h * k1R)
                        k3m, k3R = _smoother_rhs(m, gain(i - 1), subs[i - 1][0], mus + 0.5 * h * k2m, Rs + 0.5 * h * k2R)
                        k4m, k4R = _smoother_rhs(m, gain(i - 2), subs[i - 2][0], mus + h * k3m, Rs + h * k3R)
                        mus = mus + (h / 6.0) * (k1m + 2 * k2m + 2 * k3m + k4m)
                        Rs = Rs + (h / 6.0) * (k1R + 2 * k2R + 2 * k3R + k4R)
                        i -= 2
                    else:
                        k1m, k1R = _smoother_rhs(m, gain(i), subs[i][0], mus, Rs)
                        k2m, k2R = _smoother_rhs(m, gain(i - 1), subs[i - 1][0], mus + dt * k1m, Rs + dt * k1R)
                        mus = mus + 0.5 * dt * (k1m + k2m)
                        Rs = Rs + 0.5 * dt * (k1R + k2R)
                        i -= 1
                    Rs = 0.5 * (Rs + Rs.T)
            if n_samples:
                sq = np.sqrt(dt) * m.b_diag[:, None]
                for i in range(last, 0, -1):
                    k -= 1
                    Y = Y + dt * _sampler_drift(m, gain(i), subs[i][0], Y) + sq * noise[k]
        if smoother:
            s_mu[r], s_R[r] = mus, Rs
        if n_samples:
            samples[:, r] = Y.T

    post = GaussianPosterior(fres.times.copy(), s_mu, s_R) if smoother else None
    draws = PosteriorSamples(fres.times.copy(), samples, seqs) if n_samples else None
    return post, draws


def smoother_backward(fres: FilterResult):
    """Smoother moments at the filter's record times."""
    post, _ = backward_pass(fres, smoother=True)
    return post


def sample_backward(fres: FilterResult, n_samples, rng=0):
    """Posterior trajectories drawn by backward sampling from the filter."""
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be at least 1")
    _, draws = backward_pass(fres, smoother=False, n_samples=n_samples, rng=rng)
    return draws
