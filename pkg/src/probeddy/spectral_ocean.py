"""Stochastic spectral ocean: OU dynamics per Fourier mode on a periodic square.

The flow on ``[0, L)^2`` is a finite Fourier sum

    u_o(x) = sum_k  c_k exp(-2 pi i k.x / L) r_k,
    r_k = (2 pi i k2 / L, -2 pi i k1 / L),

over a retained set of wavenumbers closed under negation, with reality enforced
by ``c_{-k} = conj(c_k)``. Only one representative per conjugate pair is
stored (see :class:`ModeSet`), so every state is real by construction.

Each coefficient follows an independent complex OU process

    dc_k = ((-a_k + i phi_k) c_k + f_k) dt + sigma_k dW_k,

with ``dW = (xi_1 + i xi_2) / sqrt(2)``, ``xi_j ~ N(0, dt)``.

Grids use ``indexing="ij"``: ``u[i, j]`` is the value at ``(x, y) = (i h, j h)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import AliasingError, InvalidParameterError

TWO_PI = 2.0 * np.pi
SPECTRUM_FORMAT_VERSION = 1


def _canonical(k1, k2):
    return k1 > 0 or (k1 == 0 and k2 > 0)


class ModeSet:
    """Retained wavenumbers, one representative ``k`` per pair ``{k, -k}``.

    The representative is the member with ``k1 > 0`` or ``k1 == 0, k2 > 0``.
    Ocean real coordinates are interleaved ``(Re c_0, Im c_0, Re c_1, ...)``
    over the representatives, in the stored order.
    """

    def __init__(self, wavenumbers):
        ks = np.asarray(wavenumbers, dtype=np.int64).reshape(-1, 2)
        half = []
        seen = set()
        for k1, k2 in ks.tolist():
            if k1 == 0 and k2 == 0:
                raise InvalidParameterError("the (0, 0) mode cannot be retained")
            rep = (k1, k2) if _canonical(k1, k2) else (-k1, -k2)
            if rep in seen:
                continue
            seen.add(rep)
            half.append(rep)
        self.half = np.array(half, dtype=np.int64).reshape(-1, 2)
        self._index = {tuple(k): i for i, k in enumerate(self.half.tolist())}

    @classmethod
    def square(cls, kmax):
        """All ``k`` in ``[-kmax, kmax]^2`` except the origin."""
        r = np.arange(-kmax, kmax + 1)
        k1, k2 = np.meshgrid(r, r, indexing="ij")
        ks = np.column_stack([k1.ravel(), k2.ravel()])
        ks = ks[(ks[:, 0] != 0) | (ks[:, 1] != 0)]
        return cls(ks)

    @property
    def n_pairs(self):
        return len(self.half)

    @property
    def n_modes(self):
        return 2 * len(self.half)

    @property
    def n_real(self):
        return 2 * len(self.half)

    @property
    def full(self):
        return np.vstack([self.half, -self.half])

    @property
    def kmax(self):
        return int(np.abs(self.half).max()) if len(self.half) else 0

    @property
    def ksq(self):
        return (self.half**2).sum(axis=1).astype(float)

    def index(self, k1, k2):
        """Position of the pair containing ``(k1, k2)`` and whether it is the mirror."""
        if (k1, k2) in self._index:
            return self._index[(k1, k2)], False
        if (-k1, -k2) in self._index:
            return self._index[(-k1, -k2)], True
        raise KeyError((k1, k2))

    def __len__(self):
        return self.n_pairs

    def __eq__(self, other):
        return isinstance(other, ModeSet) and np.array_equal(self.half, other.half)

    def __hash__(self):
        return hash(self.half.tobytes())

    def __repr__(self):
        return f"ModeSet(n_modes={self.n_modes}, kmax={self.kmax})"


@dataclass(frozen=True)
class EquilibriumStats:
    """Equilibrium mean, variance (E|c - mean|^2) and complex decorrelation time."""

    mean: np.ndarray
    variance: np.ndarray
    t_corr: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=complex))
        object.__setattr__(self, "variance", np.asarray(self.variance, dtype=float))
        object.__setattr__(self, "t_corr", np.asarray(self.t_corr, dtype=complex))


@dataclass(frozen=True)
class OUModeParams:
    """Per-mode OU parameters for the stored representatives of a ModeSet.

    Mirror modes carry ``a, -phi, conj(f), sigma``; see :meth:`mirror`.
    """

    a: np.ndarray
    phi: np.ndarray
    f: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if np.any(~(a > 0)):
            raise InvalidParameterError("OU damping a must be positive")
        if np.any(~(sigma >= 0)):
            raise InvalidParameterError("OU noise amplitude sigma must be non-negative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        object.__setattr__(self, "f", np.asarray(self.f, dtype=complex))
        object.__setattr__(self, "sigma", sigma)

    @property
    def rate(self):
        """Complex drift coefficient ``-a + i phi``."""
        return -self.a + 1j * self.phi

    def mirror(self):
        return OUModeParams(self.a, -self.phi, np.conj(self.f), self.sigma)

    def __len__(self):
        return int(np.size(self.a))


def calibrate(stats: EquilibriumStats) -> OUModeParams:
    """Invert the equilibrium statistics to OU parameters."""
    tc = stats.t_corr
    var = stats.variance
    if np.any(~(tc.real > 0)):
        raise InvalidParameterError("decorrelation time must have positive real part")
    if np.any(~(var >= 0)):
        raise InvalidParameterError("variance must be non-negative")
    inv = 1.0 / tc
    return OUModeParams(
        a=inv.real,
        phi=-inv.imag,
        f=stats.mean / tc,
        sigma=np.sqrt(2.0 * var * inv.real),
    )


def equilibrium_stats(params: OUModeParams) -> EquilibriumStats:
    """Equilibrium mean ``f/(a - i phi)``, variance ``sigma^2/(2a)``, ``T = 1/(a - i phi)``."""
    if np.any(~(params.a > 0)):
        raise InvalidParameterError("OU damping a must be positive")
    denom = params.a - 1j * params.phi
    return EquilibriumStats(
        mean=params.f / denom,
        variance=params.sigma**2 / (2.0 * params.a),
        t_corr=1.0 / denom,
    )


@dataclass(frozen=True)
class SpectralOceanState:
    """Fourier coefficients of the stream-function-like field at one instant."""

    modes: ModeSet
    coeffs: np.ndarray
    domain_size: float = 400.0
    time: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        if c.size != self.modes.n_pairs:
            raise InvalidParameterError(
                f"expected {self.modes.n_pairs} coefficients, got {c.size}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, modes, domain_size=400.0, time=0.0):
        return cls(modes, np.zeros(modes.n_pairs, dtype=complex), domain_size, time)

    @classmethod
    def from_real(cls, modes, vec, domain_size=400.0, time=0.0):
        vec = np.asarray(vec, dtype=float)
        return cls(modes, vec[0::2] + 1j * vec[1::2], domain_size, time)

    def to_real(self):
        out = np.empty(2 * self.coeffs.size)
        out[0::2] = self.coeffs.real
        out[1::2] = self.coeffs.imag
        return out

    def full_coeffs(self):
        """Coefficients aligned with ``modes.full`` (representatives, then mirrors)."""
        return np.concatenate([self.coeffs, np.conj(self.coeffs)])

    def coeff(self, k1, k2):
        if k1 == 0 and k2 == 0:
            return 0j
        try:
            i, mirrored = self.modes.index(k1, k2)
        except KeyError:
            return 0j
        return np.conj(self.coeffs[i]) if mirrored else self.coeffs[i]

    def to_dict(self):
        return {tuple(k): c for k, c in zip(self.modes.full.tolist(), self.full_coeffs())}

    def with_coeffs(self, coeffs, time=None):
        return replace(self, coeffs=coeffs, time=self.time if time is None else time)


def complex_noise(rng, shape):
    """Standard complex normal draws with ``E|z|^2 = 1``."""
    xi = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
    return (xi[0] + 1j * xi[1]) / np.sqrt(2.0)


def step_ou(state, params, dt, rng, method="euler"):
    """Advance every retained mode by one step of length ``dt``.

    ``method="euler"`` is Euler-Maruyama; ``method="exact"`` samples the exact
    Gaussian transition of the OU process.
    """
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    c = state.coeffs
    noise = complex_noise(rng, c.size)
    lam = params.rate
    if method == "euler":
        new = c + (lam * c + params.f) * dt + params.sigma * np.sqrt(dt) * noise
    elif method == "exact":
        decay = np.exp(lam * dt)
        mean = params.f / (params.a - 1j * params.phi)
        sd = params.sigma * np.sqrt(-np.expm1(-2.0 * params.a * dt) / (2.0 * params.a))
        new = mean + (c - mean) * decay + sd * noise
    else:
        raise InvalidParameterError(f"unknown OU step method {method!r}")
    return state.with_coeffs(new, time=state.time + dt)


def simulate_ou(state, params, dt, n_steps, rng, record_every=1):
    """Euler-Maruyama run of ``n_steps`` steps through the compiled kernel.

    Draws noise in the same order as repeated :func:`step_ou` calls.

    Returns
    -------
    times : ndarray (n_rec,)
    coeffs : ndarray (n_rec, n_pairs) complex
    """
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    K = state.coeffs.size
    xi = rng.standard_normal((n_steps, 2, K))
    noise = (xi[:, 0] + 1j * xi[:, 1]) / np.sqrt(2.0)
    coeffs = kernels.ou_path(
        state.coeffs, params.rate, params.f, params.sigma, dt, noise, record_every
    )
    times = state.time + dt * record_every * np.arange(coeffs.shape[0])
    return times, coeffs


def equilibrium_sample(modes, params, rng, domain_size=400.0, time=0.0):
    """Draw a state from the OU equilibrium distribution."""
    st = equilibrium_stats(params)
    c = st.mean + np.sqrt(st.variance) * complex_noise(rng, modes.n_pairs)
    return SpectralOceanState(modes, c, domain_size, time)


# -- physical-space reconstruction -------------------------------------------------


def _phase(modes_k, x, L):
    x = np.asarray(x, dtype=float)
    return (TWO_PI / L) * (x[..., None, 0] * modes_k[:, 0] + x[..., None, 1] * modes_k[:, 1])


def _check_real(z, what):
    z = np.asarray(z)
    scale = np.max(np.abs(z.real)) if z.size else 0.0
    resid = np.max(np.abs(z.imag)) if z.size else 0.0
    if resid > 1e-9 * max(scale, 1e-300) and resid > 1e-300:
        raise InvalidParameterError(f"{what} has imaginary residue {resid:.3g}")
    return z.real


def velocity_at(state, x):
    """Ocean velocity ``(u, v)`` in km/day at positions ``x`` (..., 2) in km."""
    L = state.domain_size
    ks = state.modes.full
    if ks.size == 0:
        return np.zeros(np.shape(x), dtype=float)
    c = state.full_coeffs()
    e = c * np.exp(-1j * _phase(ks, x, L))
    kappa = TWO_PI / L
    u = (e * (1j * kappa * ks[:, 1])).sum(axis=-1)
    v = (e * (-1j * kappa * ks[:, 0])).sum(axis=-1)
    return np.stack([_check_real(u, "u"), _check_real(v, "v")], axis=-1)


def vorticity_at(state, x):
    """Relative vorticity ``dv/dx - du/dy`` (1/day) at positions ``x``.

    Differentiating the velocity series gives ``-(2 pi |k| / L)^2`` per mode.
    """
    L = state.domain_size
    ks = state.modes.full
    if ks.size == 0:
        return np.zeros(np.shape(x)[:-1], dtype=float)
    c = state.full_coeffs()
    k2 = (ks**2).sum(axis=1)
    e = c * np.exp(-1j * _phase(ks, x, L))
    w = (e * (-((TWO_PI / L) ** 2) * k2)).sum(axis=-1)
    return _check_real(w, "vorticity")


def velocity_matrix(modes, x, L):
    """Linear maps from ocean real coordinates to ``(u, v, vorticity)`` at ``x``.

    Returns three arrays of shape ``x.shape[:-1] + (2 * n_pairs,)`` so that
    ``gu @ state.to_real()`` equals ``velocity_at(state, x)[..., 0]``.
    """
    ks = modes.half
    kappa = TWO_PI / L
    th = _phase(ks, x, L)
    s, c = np.sin(th), np.cos(th)
    shape = th.shape[:-1] + (2 * ks.shape[0],)
    gu = np.empty(shape)
    gv = np.empty(shape)
    gz = np.empty(shape)
    # u = 2 kappa k2 (p sin - q cos), v = -2 kappa k1 (p sin - q cos)
    gu[..., 0::2] = 2 * kappa * ks[:, 1] * s
    gu[..., 1::2] = -2 * kappa * ks[:, 1] * c
    gv[..., 0::2] = -2 * kappa * ks[:, 0] * s
    gv[..., 1::2] = 2 * kappa * ks[:, 0] * c
    # vorticity = -2 kappa^2 |k|^2 (p cos + q sin)
    w = -2 * kappa**2 * (ks**2).sum(axis=1)
    gz[..., 0::2] = w * c
    gz[..., 1::2] = w * s
    return gu, gv, gz


@dataclass(frozen=True)
class VelocityGrid:
    n: int
    u: np.ndarray
    v: np.ndarray
    spacing: float
    time: float = 0.0


def _check_grid(modes, n):
    need = 2 * modes.kmax + 2
    if n < need:
        raise AliasingError(f"grid size {n} aliases modes up to |k|={modes.kmax}; need n >= {need}")


def _spectral_array(modes, n, weights):
    """Scatter per-mode values (over ``modes.full``) into an n x n FFT array."""
    ks = modes.full
    out = np.zeros((n, n), dtype=complex)
    np.add.at(out, (ks[:, 0] % n, ks[:, 1] % n), weights)
    return out


def velocity_grid(state, n):
    """Velocity on the uniform ``n x n`` grid via a 2-D FFT of the mode array."""
    _check_grid(state.modes, n)
    L = state.domain_size
    ks = state.modes.full
    c = state.full_coeffs()
    kappa = TWO_PI / L
    u = np.fft.fft2(_spectral_array(state.modes, n, c * 1j * kappa * ks[:, 1]))
    v = np.fft.fft2(_spectral_array(state.modes, n, c * -1j * kappa * ks[:, 0]))
    return VelocityGrid(n, _check_real(u, "u"), _check_real(v, "v"), L / n, state.time)


def velocity_gradients(state, n):
    """``u_x, u_y, v_x, v_y`` on the ``n x n`` grid, differentiated spectrally."""
    _check_grid(state.modes, n)
    L = state.domain_size
    ks = state.modes.full
    c = state.full_coeffs()
    kappa = TWO_PI / L
    uh = c * 1j * kappa * ks[:, 1]
    vh = c * -1j * kappa * ks[:, 0]
    dx = -1j * kappa * ks[:, 0]
    dy = -1j * kappa * ks[:, 1]
    out = {}
    for name, w in (("u_x", uh * dx), ("u_y", uh * dy), ("v_x", vh * dx), ("v_y", vh * dy)):
        out[name] = _check_real(np.fft.fft2(_spectral_array(state.modes, n, w)), name)
    return out


def spectral_divergence(grid: VelocityGrid):
    """Max-abs divergence of a periodic grid field, differentiated spectrally."""
    n = grid.n
    freq = np.fft.fftfreq(n, d=grid.spacing) * TWO_PI
    kx, ky = np.meshgrid(freq, freq, indexing="ij")
    div = np.fft.ifft2(1j * kx * np.fft.fft2(grid.u) + 1j * ky * np.fft.fft2(grid.v))
    return float(np.max(np.abs(div)))


# -- default spectrum and files ----------------------------------------------------


@dataclass(frozen=True)
class SpectrumSpec:
    """Parametric synthetic spectrum.

    Variance per mode scales as ``|k|**slope``, normalised so the domain-mean
    kinetic energy gives ``rms_speed``. Decorrelation times fall off as
    ``tcorr_max / |k|**tcorr_exponent``; a uniform drift speed adds the
    Doppler phase rate ``phi = 2 pi k1 drift / L``.
    """

    rms_speed: float = 8.0  # km/day
    slope: float = -4.0
    tcorr_max: float = 20.0  # days
    tcorr_exponent: float = 0.5
    drift_speed: float = 1.0  # km/day


def default_spectrum(modes, domain_size=400.0, spec: SpectrumSpec | None = None):
    spec = spec or SpectrumSpec()
    kabs = np.sqrt(modes.ksq)
    shape = kabs**spec.slope
    kappa = TWO_PI / domain_size
    # E|u|^2 summed over both members of each pair
    energy = 2.0 * np.sum(shape * (kappa * kabs) ** 2)
    variance = shape * spec.rms_speed**2 / energy
    a = kabs**spec.tcorr_exponent / spec.tcorr_max
    phi = kappa * modes.half[:, 0] * spec.drift_speed
    return EquilibriumStats(
        mean=np.zeros(modes.n_pairs, dtype=complex),
        variance=variance,
        t_corr=1.0 / (a - 1j * phi),
    )


def write_spectrum(path, modes, stats, domain_size, meta=None):
    """Write a spectrum file: one record per conjugate pair representative."""
    rows = []
    for (k1, k2), m, v, t in zip(modes.half.tolist(), stats.mean, stats.variance, stats.t_corr):
        rows.append(
            {
                "k1": k1,
                "k2": k2,
                "mean_re": float(m.real),
                "mean_im": float(m.imag),
                "variance": float(v),
                "tcorr_re": float(t.real),
                "tcorr_im": float(t.imag),
            }
        )
    doc = {
        "format": "probeddy-spectrum",
        "version": SPECTRUM_FORMAT_VERSION,
        "domain_size_km": float(domain_size),
        "units": {"variance": "(km^2/day)^2", "tcorr": "day"},
        "meta": meta or {},
        "modes": rows,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def read_spectrum(path):
    """Read a spectrum file.

    Mirror entries (``-k``) may be listed; they must match the conjugate of
    their representative.

    Returns
    -------
    modes : ModeSet
    stats : EquilibriumStats
    domain_size : float
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != SPECTRUM_FORMAT_VERSION:
        raise InvalidParameterError(f"unsupported spectrum version {doc.get('version')}")
    reps = {}
    mirrors = {}
    for r in doc["modes"]:
        k = (int(r["k1"]), int(r["k2"]))
        vals = (
            complex(r["mean_re"], r["mean_im"]),
            float(r["variance"]),
            complex(r["tcorr_re"], r["tcorr_im"]),
        )
        if _canonical(*k):
            reps[k] = vals
        else:
            mirrors[(-k[0], -k[1])] = vals
    for k, (m, v, t) in mirrors.items():
        if k not in reps:
            reps[k] = (np.conj(m), v, np.conj(t))
            continue
        m0, v0, t0 = reps[k]
        if not (np.isclose(m, np.conj(m0)) and np.isclose(v, v0) and np.isclose(t, np.conj(t0))):
            raise InvalidParameterError(f"mirror entry for {k} breaks conjugate symmetry")
    ks = list(reps)  # file order defines the state layout
    modes = ModeSet(ks)
    vals = [reps[tuple(k)] for k in modes.half.tolist()]
    stats = EquilibriumStats(
        mean=np.array([v[0] for v in vals]),
        variance=np.array([v[1] for v in vals]),
        t_corr=np.array([v[2] for v in vals]),
    )
    return modes, stats, float(doc["domain_size_km"])


def write_snapshot_csv(path, state):
    """Write ``(k1, k2, re, im)`` rows for every retained mode including mirrors."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k1", "k2", "re", "im"])
        for (k1, k2), c in zip(state.modes.full.tolist(), state.full_coeffs()):
            w.writerow([k1, k2, repr(float(c.real)), repr(float(c.imag))])


def read_snapshot_csv(path, domain_size=400.0, time=0.0):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    reps = {}
    for r in rows:
        k = (int(r["k1"]), int(r["k2"]))
        c = complex(float(r["re"]), float(r["im"]))
        if _canonical(*k):
            reps[k] = c
    modes = ModeSet(sorted(reps))
    coeffs = np.array([reps[tuple(k)] for k in modes.half.tolist()])
    return SpectralOceanState(modes, coeffs, domain_size, time)
