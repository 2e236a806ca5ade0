"""Independent reference implementations used by the tests.

Nothing here calls into the assimilation code: matrices are assembled from
``velocity_at``/``vorticity_at`` probes, and the Kalman-Bucy filter and the
continuous-time RTS smoother are integrated with scipy's adaptive DOP853.
"""
import numpy as np
from scipy.integrate import solve_ivp

from probeddy.spectral_ocean import SpectralOceanState, velocity_at, vorticity_at


def probe_maps(modes, x, L):
    """Linear maps real-coordinate -> (u, v, vorticity) at x, by unit probes."""
    nr = modes.n_real
    gu = np.zeros((len(x), nr))
    gv = np.zeros((len(x), nr))
    gz = np.zeros((len(x), nr))
    for c in range(nr):
        e = np.zeros(nr)
        e[c] = 1.0
        st = SpectralOceanState.from_real(modes, e, L)
        uv = velocity_at(st, x)
        gu[:, c] = uv[:, 0]
        gv[:, c] = uv[:, 1]
        gz[:, c] = vorticity_at(st, x)
    return gu, gv, gz


def linear_floe_ocean(modes, params, L, x_obs, beta, s, sw, b_floe, b_spin, bx, bw):
    """Dense (A1, Bdiag, a0, a1, Q) for the constant-drag floe-ocean system."""
    nfl = len(x_obs)
    K = modes.n_pairs
    nf = 3 * nfl
    n = nf + 2 * K
    gu, gv, gz = probe_maps(modes, x_obs, L)
    a1 = np.zeros((n, n))
    for l in range(nfl):
        a1[2 * l, 2 * l] = -beta * s
        a1[2 * l, nf:] = beta * s * gu[l]
        a1[2 * l + 1, 2 * l + 1] = -beta * s
        a1[2 * l + 1, nf:] = beta * s * gv[l]
        a1[2 * nfl + l, 2 * nfl + l] = -beta * sw
        a1[2 * nfl + l, nf:] = 0.5 * beta * sw * gz[l]
    a0 = np.zeros(n)
    for k in range(K):
        # d(p + iq)/dt = (-a + i phi)(p + iq) + f
        a, phi = params.a[k], params.phi[k]
        i = nf + 2 * k
        a1[i, i], a1[i, i + 1] = -a, -phi
        a1[i + 1, i], a1[i + 1, i + 1] = phi, -a
        a0[i], a0[i + 1] = params.f[k].real, params.f[k].imag
    q = np.concatenate([np.full(2 * nfl, b_floe**2), np.full(nfl, b_spin**2),
                        np.repeat(params.sigma**2 / 2.0, 2)])
    A1 = np.zeros((nf, n))
    A1[:, :nf] = np.eye(nf)
    Bd = np.concatenate([np.full(2 * nfl, bx), np.full(nfl, bw)])
    return A1, Bd, a0, a1, q


def kalman_bucy(times, systems, rates, mu0, R0, rtol=1e-11, atol=1e-11):
    """Filter with piecewise-constant matrices ``systems[j] = (A1, Bd, a0, a1, q)``.

    Returns filter means/covariances at ``times`` and dense interpolants per step.
    """
    n = len(mu0)
    mus, Rs, dense = [np.array(mu0, float)], [np.array(R0, float)], []
    y = np.concatenate([mu0, np.ravel(R0)])
    for j in range(len(times) - 1):
        A1, Bd, a0, a1, q = systems[j]
        W = np.diag(1.0 / Bd**2)
        z = rates[j]

        def rhs(t, y):
            mu = y[:n]
            R = y[n:].reshape(n, n)
            G = R @ A1.T @ W
            dmu = a0 + a1 @ mu + G @ (z - A1 @ mu)
            dR = a1 @ R + R @ a1.T + np.diag(q) - G @ A1 @ R
            return np.concatenate([dmu, dR.ravel()])

        sol = solve_ivp(rhs, (times[j], times[j + 1]), y, method="DOP853", rtol=rtol, atol=atol,
                        dense_output=True)
        y = sol.y[:, -1]
        dense.append(sol.sol)
        mus.append(y[:n].copy())
        Rs.append(y[n:].reshape(n, n).copy())
    return np.array(mus), np.array(Rs), dense


def rts_smoother(times, systems, dense, mu_T, R_T, rtol=1e-11, atol=1e-11):
    """Continuous-time RTS smoother integrated backward from ``(mu_T, R_T)``."""
    n = len(mu_T)
    mus, Rs = [np.array(mu_T)], [np.array(R_T)]
    y = np.concatenate([mu_T, np.ravel(R_T)])
    for j in range(len(times) - 2, -1, -1):
        _, _, a0, a1, q = systems[j]
        Q = np.diag(q)
        filt = dense[j]

        def rhs(t, y):
            f = filt(t)
            muf = f[:n]
            Rf = f[n:].reshape(n, n)
            Rf = 0.5 * (Rf + Rf.T)
            Kg = Q @ np.linalg.inv(Rf)
            mu = y[:n]
            R = y[n:].reshape(n, n)
            dmu = a0 + a1 @ mu + Kg @ (mu - muf)
            M = a1 + Kg
            dR = M @ R + R @ M.T - Q
            return np.concatenate([dmu, dR.ravel()])

        sol = solve_ivp(rhs, (times[j + 1], times[j]), y, method="DOP853", rtol=rtol, atol=atol)
        y = sol.y[:, -1]
        mus.append(y[:n].copy())
        Rs.append(y[n:].reshape(n, n).copy())
    return np.array(mus[::-1]), np.array(Rs[::-1])
