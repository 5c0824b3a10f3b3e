"""Reference values and independent re-implementations used by the test-suite.

Everything here is written without importing the package's numerical code, so a
shared mistake cannot make both sides agree. Literal constants were evaluated
once with mpmath at 30 significant digits and are frozen.
"""

from __future__ import annotations

import math

import numpy as np

# ---- rotor power constants (W, m/s, ...) and hand-evaluated powers
P0, PI, U_TIP, V0, D0, RHO, SOLIDITY, DISC = 80.0, 88.6, 120.0, 4.03, 0.6, 1.225, 0.05, 0.503
POWER_AT_0 = 168.6
POWER_AT_20 = 178.445893322265169853290117238
POWER_AT_30 = 356.450871575537482390503087172
POWER_AT_100 = 9492.86224195768551343648808619
PARASITE_COEF = 0.009242625  # D0*rho*s*A/2
ENERGY_25_WAYPOINTS_CRUISE = 7534.72099958494386949837939641  # 25*1.5*P(20) + 5*1*P(0)

# ---- link budget
NOISE_POWER = 1e-14  # -170 dBm/Hz over 1 MHz
RATE_ABOVE_USER = 11288289.3421809699696381735305  # 1e6*log2(2501)
RADAR_VAR_AT_200M = 0.000801899573803635656002486699016  # a=10


def power(speed: float) -> float:
    v = float(speed)
    induced = math.sqrt(math.sqrt(1 + v**4 / (4 * V0**4)) - v**2 / (2 * V0**2))
    return P0 * (1 + 3 * v**2 / U_TIP**2) + PI * induced + 0.5 * D0 * RHO * SOLIDITY * DISC * v**3


# ---- Fisher information by finite differences of a Gaussian range model


def fisher_fd(hovers, target, altitude: float, var_coeff: float, h: float = 1e-3) -> np.ndarray:
    """Expected information of independent N(d_k, c*d_k^4) ranges about the planar target.

    Uses the general Gaussian formula  mu' mu'^T / var + (var')(var')^T / (2 var^2)
    with both derivatives taken by central differences.
    """
    hovers = np.asarray(hovers, dtype=float).reshape(-1, 2)
    t = np.asarray(target, dtype=float)

    def mean(u):
        return np.sqrt(altitude**2 + np.sum((hovers - u) ** 2, axis=1))

    def var(u):
        return var_coeff * mean(u) ** 4

    dm = np.empty((len(hovers), 2))
    dv = np.empty((len(hovers), 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        dm[:, i] = (mean(t + e) - mean(t - e)) / (2 * h)
        dv[:, i] = (var(t + e) - var(t - e)) / (2 * h)
    v = var(t)
    fim = np.zeros((2, 2))
    for k in range(len(hovers)):
        fim += np.outer(dm[k], dm[k]) / v[k] + np.outer(dv[k], dv[k]) / (2 * v[k] ** 2)
    return fim


def crb_trace(fim: np.ndarray) -> float:
    return float(np.trace(np.linalg.inv(fim)))


# ---- cvxpy model of the convexified stage subproblem in (s, delta, xi)


def cvx_subproblem(sub, solver: str = "CLARABEL"):
    """Solve the same convex program as :class:`uavisac.sca.Subproblem` with cvxpy.

    Built from the public pieces of ``sub`` (expansion point, weights, constants)
    in the original slack variables, so the solver's eliminations are not reused.
    Returns (waypoints, delta, xi, objective).
    """
    import cvxpy as cp

    n = sub.n_wp
    s = cp.Variable((n, 2))
    delta = cp.Variable(n)
    xi = cp.Variable(n)
    prev = cp.vstack([sub.start.reshape(1, 2), s[:-1, :]])
    v = (s - prev) / sub.tf
    d0 = sub.delta0
    v0 = sub.v0
    speed2 = cp.sum(cp.square(v), axis=1)
    lin = (sub.v0_sq + 2 * cp.sum(cp.multiply(v0, v - v0), axis=1)) / sub.vind2
    energy = sub.tf * cp.sum(sub.c2 * speed2 + sub.c3 * cp.power(cp.norm(v, 2, axis=1), 3) + sub.p_ind * delta)
    cons = [
        speed2 <= sub.vmax2,
        s[:, 0] >= 0,
        s[:, 1] >= 0,
        s[:, 0] <= sub.lx,
        s[:, 1] <= sub.ly,
        delta <= 1.01,
        xi >= 0,
        energy + sub.e_const <= sub.e_budget,
        cp.power(delta, -2) - xi <= lin,
        xi <= d0**2 + 2 * cp.multiply(d0, delta - d0),
    ]
    obj = sub.obj_const + cp.sum(cp.multiply(sub.crb_coef, s)) + sub.delta_price * cp.sum(delta)
    if np.any(sub.q):
        obj = obj + cp.sum(cp.multiply(sub.q, cp.sum(cp.square(s - sub.user.reshape(1, 2)), axis=1)))
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=solver)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"cvxpy status {prob.status}")
    return s.value, delta.value, xi.value, float(prob.value)


# ---- brute force for rate-only flight along a line


def brute_force_line(start_x: float, user_x: float, n: int, vmax: float, t_fly: float, altitude: float,
                     snr_ref: float, bandwidth: float, step: float = 0.5) -> tuple[np.ndarray, float]:
    """Best mean rate over n waypoints on the user's line, each hop at most vmax*t_fly.

    Exhaustive dynamic programme over positions on a ``step`` lattice (energy ignored).
    """
    reach = vmax * t_fly
    lo, hi = min(start_x, user_x) - reach, max(start_x, user_x) + n * reach
    grid = np.arange(lo, hi + step / 2, step)

    def rate(x):
        return bandwidth * np.log2(1 + snr_ref / (altitude**2 + (x - user_x) ** 2))

    r = rate(grid)
    # value[i] = best sum of rates for the remaining waypoints when standing at grid[i]
    value = np.zeros(len(grid))
    choice = []
    hop = int(math.floor(reach / step + 1e-9))
    for _ in range(n):
        padded = np.concatenate([np.full(hop, -np.inf), r + value, np.full(hop, -np.inf)])
        windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * hop + 1)
        arg = np.argmax(windows, axis=1)
        choice.append(arg - hop)
        value = windows[np.arange(len(grid)), arg]
    i = int(np.argmin(np.abs(grid - start_x)))
    path = []
    for c in reversed(choice):
        i = i + int(c[i])
        path.append(grid[i])
    return np.array(path), float(np.mean(rate(np.array(path))))
