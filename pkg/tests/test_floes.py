import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probeddy.errors import InvalidParameterError
from probeddy.floes import (
    FloePhysical,
    FloeState,
    ObservationSeries,
    OceanPath,
    floe_step,
    initial_floes,
    observe,
    ocean_forcing,
    read_observations_csv,
    simulate_truth,
    write_observations_csv,
    write_trajectories_csv,
)
from probeddy.spectral_ocean import (
    ModeSet,
    SpectralOceanState,
    calibrate,
    default_spectrum,
    equilibrium_sample,
    simulate_ou,
)

L = 400.0
PHYS = FloePhysical()


def single_mode_ocean(c=2.0 - 1.0j, k=(1, 1)):
    return SpectralOceanState(ModeSet([k]), [c], L)


def still_ocean():
    return SpectralOceanState.zeros(ModeSet([(1, 0)]), L)


def run(state, ocean, dt, t_end, background=(0.0, 0.0)):
    for _ in range(int(round(t_end / dt))):
        state = floe_step(state, ocean, PHYS, dt, background)
    return state


def test_beta_conversion():
    assert PHYS.beta == pytest.approx(3e-3 * 1000 / (2 * 920) * 1000)


def test_physical_parameters_must_be_positive():
    with pytest.raises(InvalidParameterError):
        FloePhysical(thickness_m=0.0)


def test_comoving_floe_is_pure_advection():
    ocean = single_mode_ocean()
    x = np.array([[123.0, 45.0]])
    uo, zeta = ocean_forcing(ocean, x)
    s = FloeState(x, uo, [0.3], 0.5 * zeta)
    out = floe_step(s, ocean, PHYS, 0.01)
    np.testing.assert_array_equal(out.u, s.u)
    np.testing.assert_array_equal(out.omega, s.omega)
    np.testing.assert_allclose(out.x, x + 0.01 * uo)


def test_quadratic_drag_decay_in_still_water():
    s = FloeState([[10.0, 10.0]], [[1.0, 0.0]], [0.0], [0.0])
    speeds = []
    for _ in range(2000):
        s = floe_step(s, still_ocean(), PHYS, 0.01)
        speeds.append(np.hypot(*s.u[0]))
    speeds = np.array(speeds)
    assert np.all(np.diff(speeds) < 0) and np.all(speeds > 0)
    assert speeds[-1] < 0.05


def test_first_order_convergence():
    ocean = single_mode_ocean()
    x0 = np.array([[150.0, 260.0]])
    s0 = FloeState(x0, [[0.5, -0.3]], [0.0], [0.05])
    ends = [run(s0, ocean, dt, 1.0) for dt in (0.001, 0.0005, 0.00025)]
    y = [np.concatenate([e.x.ravel(), e.u.ravel(), e.omega]) for e in ends]
    ratio = np.linalg.norm(y[0] - y[1]) / np.linalg.norm(y[1] - y[2])
    assert ratio == pytest.approx(2.0, rel=0.05)


def test_step_rejects_nonpositive_dt():
    s = FloeState([[1.0, 1.0]], [[0.0, 0.0]], [0.0], [0.0])
    with pytest.raises(InvalidParameterError):
        floe_step(s, still_ocean(), PHYS, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2e3, 2e3), st.floats(-2e3, 2e3), st.floats(-50, 50), st.floats(-50, 50))
def test_periodic_wrap(x, y, u, v):
    s = FloeState([[x, y]], [[u, v]], [0.0], [0.0])
    out = floe_step(s, still_ocean(), PHYS, 0.1)
    assert np.all((out.x >= 0) & (out.x < L))
    shift = (s.x + 0.1 * s.u - out.x) / L
    np.testing.assert_allclose(shift, np.round(shift), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.001, 0.05))
def test_drag_relaxation_non_increasing(seed, dt):
    rng = np.random.default_rng(seed)
    ocean = single_mode_ocean(complex(*rng.normal(size=2)) * 5)
    x = rng.uniform(0, L, (5, 2))
    uo, _ = ocean_forcing(ocean, x)
    u = uo + rng.normal(scale=3.0, size=(5, 2))
    rel = np.linalg.norm(u - uo, axis=1)
    if np.any(dt * PHYS.beta * rel >= 1):
        return
    s = FloeState(x, u, np.zeros(5), np.zeros(5))
    out = floe_step(s, ocean, PHYS, dt)
    # frozen ocean field: compare against u_o at the old positions
    assert np.all(np.linalg.norm(out.u - uo, axis=1) <= rel + 1e-12)


def test_galilean_consistency():
    ocean = single_mode_ocean()
    rng = np.random.default_rng(0)
    x = rng.uniform(0, L, (6, 2))
    u = rng.normal(size=(6, 2))
    c = np.array([3.0, -2.0])
    a = floe_step(FloeState(x, u, np.zeros(6), np.zeros(6)), ocean, PHYS, 0.01)
    b = floe_step(FloeState(x, u + c, np.zeros(6), np.zeros(6)), ocean, PHYS, 0.01, background=c)
    np.testing.assert_allclose((b.u - c) - a.u, 0.0, atol=1e-12)


def _ocean_path(n_steps, seed=0, zero=False):
    modes = ModeSet.square(3)
    p = calibrate(default_spectrum(modes, L))
    rng = np.random.default_rng(seed)
    s0 = equilibrium_sample(modes, p, rng, L)
    if zero:
        s0 = SpectralOceanState.zeros(modes, L)
        p = type(p)(p.a, p.phi, p.f, np.zeros_like(p.sigma))
    times, coeffs = simulate_ou(s0, p, 0.01, n_steps, rng)
    return OceanPath(modes, times, coeffs, L)


def test_zero_ocean_floes_come_to_rest():
    path = _ocean_path(3000, zero=True)
    rng = np.random.default_rng(1)
    f0 = FloeState(rng.uniform(0, L, (4, 2)), rng.normal(size=(4, 2)), np.zeros(4), rng.normal(size=4) * 0.1)
    run_ = simulate_truth(f0, path, PHYS, record_interval=1.0)
    sp = np.linalg.norm(run_.floes.u, axis=2)
    # quadratic drag decays like 1 / (beta t)
    assert sp[-1].max() < 0.05 * sp[0].max()
    # displacement per day shrinks with the speed (position drifts only logarithmically)
    first = np.linalg.norm(run_.floes.x[1] - run_.floes.x[0], axis=1)
    last = np.linalg.norm(run_.floes.x[-1] - run_.floes.x[-2], axis=1)
    assert np.all(last < 0.1 * first) and last.max() < 0.05


def test_simulate_truth_forty_floes():
    path = _ocean_path(10_000, seed=2)
    f0 = initial_floes(40, path.state(0), np.random.default_rng(3))
    run_ = simulate_truth(f0, path, PHYS, record_interval=0.1, snapshot_interval=1.0)
    x = run_.floes.x
    assert x.shape == (1001, 40, 2) and len(run_.snapshot_times) == 101
    assert np.all((x >= 0) & (x < L))
    assert np.all(np.isfinite(run_.floes.u))
    # floe speeds stay below the largest ocean speed met along the run
    max_ocean = max(np.linalg.norm(ocean_forcing(run_.snapshot(i), x[10 * i])[0], axis=1).max()
                    for i in range(len(run_.snapshot_times)))
    assert np.linalg.norm(run_.floes.u, axis=2).mean() <= max_ocean


def test_simulate_truth_requires_commensurate_interval():
    path = _ocean_path(100)
    f0 = initial_floes(2, path.state(0), np.random.default_rng(0))
    with pytest.raises(InvalidParameterError):
        simulate_truth(f0, path, PHYS, record_interval=0.015)


def _paths(T=50, n=3, seed=0):
    path = _ocean_path(T * 10, seed)
    f0 = initial_floes(n, path.state(0), np.random.default_rng(seed))
    return simulate_truth(f0, path, PHYS, record_interval=0.1).floes


def test_observe_without_noise_is_exact():
    p = _paths()
    obs = observe(p, 0.0, np.random.default_rng(0), angle_noise_sd=0.0)
    np.testing.assert_array_equal(obs.x, p.x)
    np.testing.assert_array_equal(obs.Omega, p.Omega)


def test_observation_noise_level():
    p = _paths(T=1000, n=5)
    obs = observe(p, 0.25, np.random.default_rng(4))
    err = obs.x - p.x
    err = err - L * np.round(err / L)
    assert err.size >= 1e4
    assert err.std() == pytest.approx(0.25, rel=0.05)
    assert (obs.Omega - p.Omega).std() == pytest.approx(0.01, rel=0.05)


def test_observe_deterministic_and_per_floe_streams():
    p = _paths()
    a = observe(p, 0.25, np.random.default_rng(9))
    b = observe(p, 0.25, np.random.default_rng(9))
    np.testing.assert_array_equal(a.x, b.x)
    gens = lambda: [np.random.default_rng([9, l]) for l in range(p.n_floes)]  # noqa: E731
    full = observe(p, 0.25, gens())
    sub_paths = type(p)(p.times, p.x[:, :2], p.u[:, :2], p.Omega[:, :2], p.omega[:, :2], p.domain_size)
    sub = observe(sub_paths, 0.25, gens()[:2])
    np.testing.assert_array_equal(full.select([0, 1]).x, sub.x)


def test_observe_rejects_negative_noise():
    with pytest.raises(InvalidParameterError):
        observe(_paths(), -1.0, np.random.default_rng(0))


def test_observation_times_must_increase():
    with pytest.raises(InvalidParameterError):
        ObservationSeries(np.array([0.0, 0.0]), np.zeros((2, 1, 2)), np.zeros((2, 1)), 0.25, 0.01, L)


def test_increments_use_minimal_image():
    x = np.array([[[399.9, 0.1]], [[0.1, 399.9]]])
    obs = ObservationSeries(np.array([0.0, 0.1]), x, np.zeros((2, 1)), 0.25, 0.01, L)
    dx, _ = obs.increments()
    np.testing.assert_allclose(dx[0, 0], [0.2, -0.2])


def test_csv_exports(tmp_path):
    p = _paths(T=5, n=2)
    write_trajectories_csv(tmp_path / "traj.csv", p)
    header = (tmp_path / "traj.csv").read_text().splitlines()[0]
    assert header == "floe_id,time,x,y,u,v,Omega,omega"
    obs = observe(p, 0.25, np.random.default_rng(0))
    write_observations_csv(tmp_path / "obs.csv", obs)
    back = read_observations_csv(tmp_path / "obs.csv", 0.25, 0.01, L)
    np.testing.assert_array_equal(back.x, obs.x)
    np.testing.assert_array_equal(back.times, obs.times)
