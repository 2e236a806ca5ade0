import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probeddy.errors import AliasingError, InvalidParameterError
from probeddy.spectral_ocean import (
    EquilibriumStats,
    ModeSet,
    OUModeParams,
    SpectralOceanState,
    _check_real,
    calibrate,
    default_spectrum,
    equilibrium_sample,
    equilibrium_stats,
    read_snapshot_csv,
    read_spectrum,
    simulate_ou,
    spectral_divergence,
    step_ou,
    velocity_at,
    velocity_gradients,
    velocity_grid,
    vorticity_at,
    write_snapshot_csv,
    write_spectrum,
)

L = 400.0


def random_state(kmax, seed):
    modes = ModeSet.square(kmax)
    params = calibrate(default_spectrum(modes, L))
    return equilibrium_sample(modes, params, np.random.default_rng(seed), L)


stats_strategy = st.tuples(
    st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 100),
    st.floats(0.01, 50), st.floats(-50, 50),
)


def test_calibrate_trivial_case():
    p = calibrate(EquilibriumStats([0], [1.0], [2.0]))
    assert p.a[0] == pytest.approx(0.5)
    assert p.phi[0] == pytest.approx(0.0)
    assert p.f[0] == pytest.approx(0.0)
    assert p.sigma[0] == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(stats_strategy)
def test_calibration_round_trip(s):
    m_re, m_im, var, t_re, t_im = s
    stats = EquilibriumStats([complex(m_re, m_im)], [var], [complex(t_re, t_im)])
    back = equilibrium_stats(calibrate(stats))
    scale = max(1.0, abs(stats.mean[0]))
    assert abs(back.mean[0] - stats.mean[0]) <= 1e-12 * scale
    assert abs(back.variance[0] - var) <= 1e-12 * max(1.0, var)
    assert abs(back.t_corr[0] - stats.t_corr[0]) <= 1e-12 * max(1.0, abs(stats.t_corr[0]))


@pytest.mark.parametrize("var,tc", [(-1.0, 1.0), (1.0, 0.0), (1.0, -2.0 + 1j)])
def test_calibrate_rejects_invalid(var, tc):
    with pytest.raises(InvalidParameterError):
        calibrate(EquilibriumStats([0], [var], [tc]))


def test_equilibrium_stats_examples():
    s = equilibrium_stats(OUModeParams([1.0], [0.0], [0j], [0.0]))
    assert s.mean[0] == 0 and s.variance[0] == 0 and s.t_corr[0] == 1
    assert equilibrium_stats(OUModeParams([0.5], [0.0], [0j], [1.0])).variance[0] == pytest.approx(1.0)


@pytest.mark.parametrize("a", [0.0, -1.0])
def test_nonpositive_damping_rejected(a):
    with pytest.raises(InvalidParameterError):
        OUModeParams([a], [0.0], [0j], [1.0])


def test_mirror_parameters_are_conjugate():
    p = OUModeParams([0.3], [0.2], [1 + 2j], [0.5])
    m = p.mirror()
    assert m.a[0] == p.a[0] and m.phi[0] == -p.phi[0] and m.f[0] == np.conj(p.f[0]) and m.sigma[0] == p.sigma[0]


def test_step_ou_pure_decay():
    modes = ModeSet([(1, 0)])
    st0 = SpectralOceanState(modes, [1.0 + 0j], L)
    out = step_ou(st0, OUModeParams([1.0], [0.0], [0j], [0.0]), 0.01, np.random.default_rng(0))
    assert out.coeffs[0] == pytest.approx(0.99)
    assert out.time == pytest.approx(0.01)


def test_step_ou_keeps_conjugate_symmetry():
    s = random_state(3, 1)
    p = calibrate(default_spectrum(s.modes, L))
    out = step_ou(s, p, 0.01, np.random.default_rng(2))
    d = out.to_dict()
    for (k1, k2), c in d.items():
        assert d[(-k1, -k2)] == np.conj(c)


def test_step_ou_rejects_bad_dt():
    s = random_state(2, 0)
    with pytest.raises(InvalidParameterError):
        step_ou(s, calibrate(default_spectrum(s.modes, L)), 0.0, np.random.default_rng(0))


def test_simulate_matches_repeated_steps():
    s = random_state(2, 3)
    p = calibrate(default_spectrum(s.modes, L))
    cur = s
    rng = np.random.default_rng(7)
    for _ in range(25):
        cur = step_ou(cur, p, 0.01, rng)
    _, path = simulate_ou(s, p, 0.01, 25, np.random.default_rng(7), record_every=5)
    assert path.shape == (6, s.modes.n_pairs)
    np.testing.assert_allclose(path[-1], cur.coeffs, rtol=1e-12, atol=1e-12)


def test_long_run_variance_within_five_percent():
    # a*dt = 0.02 balances the O(a dt) Euler bias against sampling error
    modes = ModeSet([(1, 0)])
    p = OUModeParams([2.0], [0.3], [0j], [2.0])
    s0 = SpectralOceanState(modes, [0j], L)
    _, path = simulate_ou(s0, p, 0.01, 100_000, np.random.default_rng(11))
    target = equilibrium_stats(p).variance[0]
    assert np.mean(np.abs(path[1000:]) ** 2) == pytest.approx(target, rel=0.05)


def test_exact_and_euler_agree_as_dt_vanishes():
    # deterministic one-step Richardson check: Euler's local error is O(dt^2)
    modes = ModeSet([(1, 0)])
    p = OUModeParams([0.7], [0.4], [0.3 + 0.1j], [0.0])
    s0 = SpectralOceanState(modes, [1.0 + 0.5j], L)
    errs = []
    for dt in (0.01, 0.005):
        e = step_ou(s0, p, dt, np.random.default_rng(0), "euler").coeffs[0]
        x = step_ou(s0, p, dt, np.random.default_rng(0), "exact").coeffs[0]
        errs.append(abs(e - x))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_exact_step_preserves_equilibrium_moments():
    modes = ModeSet([(2, 1)])
    p = calibrate(EquilibriumStats([1 + 1j], [2.0], [3.0 + 1j]))
    st_ = equilibrium_stats(p)
    rng = np.random.default_rng(5)
    c = st_.mean + np.sqrt(st_.variance) * (rng.standard_normal(20000) + 1j * rng.standard_normal(20000)) / np.sqrt(2)
    s = SpectralOceanState(ModeSet([(2, 1)] * 1), [0j], L)
    out = []
    for ci in c[:4000]:
        out.append(step_ou(s.with_coeffs(np.array([ci])), p, 0.5, rng, "exact").coeffs[0])
    out = np.array(out)
    assert abs(out.mean() - st_.mean[0]) < 5 * np.sqrt(st_.variance[0] / len(out))
    assert np.var(out) == pytest.approx(st_.variance[0], rel=0.1)


def test_zero_state_fields_vanish():
    modes = ModeSet.square(3)
    z = SpectralOceanState.zeros(modes, L)
    x = np.random.default_rng(0).uniform(0, L, (10, 2))
    assert np.all(velocity_at(z, x) == 0)
    assert np.all(vorticity_at(z, x) == 0)
    g = velocity_grid(z, 64)
    assert np.all(g.u == 0) and np.all(g.v == 0)


def test_single_mode_closed_form():
    modes = ModeSet([(1, 0)])
    c = 0.7 - 0.4j
    s = SpectralOceanState(modes, [c], L)
    x = np.random.default_rng(1).uniform(0, L, (50, 2))
    kap = 2 * np.pi / L
    th = kap * x[:, 0]
    # psi-like field 2 Re(c e^{-i th}); u uses k2 = 0, v = -2 kappa (p sin - q cos)
    v_expect = -2 * kap * (c.real * np.sin(th) - c.imag * np.cos(th))
    uv = velocity_at(s, x)
    np.testing.assert_allclose(uv[:, 0], 0.0, atol=1e-14)
    np.testing.assert_allclose(uv[:, 1], v_expect, rtol=1e-12, atol=1e-14)
    z_expect = -2 * kap**2 * (c.real * np.cos(th) + c.imag * np.sin(th))
    np.testing.assert_allclose(vorticity_at(s, x), z_expect, rtol=1e-12, atol=1e-16)


def test_vorticity_matches_finite_difference_curl():
    s = random_state(5, 4)
    rng = np.random.default_rng(2)
    x = rng.uniform(0, L, (100, 2))
    h = 1e-3
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    dvdx = (velocity_at(s, x + ex)[:, 1] - velocity_at(s, x - ex)[:, 1]) / (2 * h)
    dudy = (velocity_at(s, x + ey)[:, 0] - velocity_at(s, x - ey)[:, 0]) / (2 * h)
    fd = dvdx - dudy
    w = vorticity_at(s, x)
    assert np.max(np.abs(w - fd)) <= 1e-6 * np.max(np.abs(w))


def test_grid_matches_direct_sum():
    s = random_state(6, 5)
    n = 64
    g = velocity_grid(s, n)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    x = np.stack([i, j], axis=-1) * (L / n)
    direct = velocity_at(s, x.reshape(-1, 2)).reshape(n, n, 2)
    assert np.max(np.abs(g.u - direct[..., 0])) < 1e-10
    assert np.max(np.abs(g.v - direct[..., 1])) < 1e-10


def test_grid_aliasing_rejected():
    s = random_state(5, 0)
    with pytest.raises(AliasingError):
        velocity_grid(s, 11)
    velocity_grid(s, 12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_incompressibility(seed):
    assert spectral_divergence(velocity_grid(random_state(4, seed), 32)) < 1e-10


def test_gradients_consistent_with_grid_differences():
    s = random_state(3, 8)
    n = 256
    g = velocity_grid(s, n)
    d = velocity_gradients(s, n)
    h = L / n
    ux_fd = (np.roll(g.u, -1, 0) - np.roll(g.u, 1, 0)) / (2 * h)
    assert np.max(np.abs(ux_fd - d["u_x"])) < 1e-3 * np.max(np.abs(d["u_x"]))
    np.testing.assert_allclose(d["u_x"] + d["v_y"], 0.0, atol=1e-12)


def test_reality_check_flags_imaginary_residue():
    with pytest.raises(InvalidParameterError):
        _check_real(np.array([1.0 + 1e-3j]), "u")
    assert _check_real(np.array([1.0 + 1e-12j]), "u")[0] == 1.0


def test_spatial_correlation_at_quarter_domain():
    modes = ModeSet.square(5)
    p = calibrate(default_spectrum(modes, L))
    rng = np.random.default_rng(3)
    n, lag = 32, 8  # lag L/4
    covs = []
    for _ in range(200):
        g = velocity_grid(equilibrium_sample(modes, p, rng, L), n)
        covs.append(np.mean(g.u * np.roll(g.u, -lag, axis=1)))
    covs = np.array(covs)
    se = covs.std(ddof=1) / np.sqrt(len(covs))
    assert abs(covs.mean()) > 5 * se


def test_spectrum_file_round_trip(tmp_path):
    modes = ModeSet.square(3)
    stats = default_spectrum(modes, L)
    stats = EquilibriumStats(stats.mean + 0.1j, stats.variance, stats.t_corr)
    path = tmp_path / "spec.json"
    write_spectrum(path, modes, stats, L)
    m2, s2, L2 = read_spectrum(path)
    assert m2 == modes and L2 == L
    np.testing.assert_allclose(s2.mean, stats.mean)
    np.testing.assert_allclose(s2.variance, stats.variance)
    np.testing.assert_allclose(s2.t_corr, stats.t_corr)


def test_spectrum_file_checks_mirror_entries(tmp_path):
    import json

    path = tmp_path / "spec.json"
    modes = ModeSet([(1, 0)])
    write_spectrum(path, modes, EquilibriumStats([1j], [1.0], [2.0 + 1j]), L)
    doc = json.loads(path.read_text())
    bad = dict(doc["modes"][0], k1=-1, mean_im=1.0)  # should be conj -> -1
    doc["modes"].append(bad)
    path.write_text(json.dumps(doc))
    with pytest.raises(InvalidParameterError):
        read_spectrum(path)


def test_snapshot_csv_round_trip(tmp_path):
    s = random_state(2, 9)
    write_snapshot_csv(tmp_path / "snap.csv", s)
    back = read_snapshot_csv(tmp_path / "snap.csv", L)
    for k, c in s.to_dict().items():
        assert back.coeff(*k) == c
