"""Log-barrier interior-point method for smooth convex programs with inequality constraints.

The problem object supplies

* ``n`` and ``objective(x)``, ``objective_grad(x)``
* ``constraints(x)``: values f_i(x), feasible when all < 0, ``nan`` outside the domain
* ``constraint_grad_sum(x, w)``: sum_i w_i grad f_i(x)
* ``kkt_factor(x, w_outer, w_curv, obj_weight)``: a factorisation (``.solve(rhs)``) of
  obj_weight * hess f0 + sum_i w_outer_i grad f_i grad f_i^T + sum_i w_curv_i hess f_i
* optionally ``interior_guess(x)``, a cheap attempt at a strictly feasible point

Iterates stay strictly feasible, so every returned point satisfies f(x) < 0.
Centering is inexact except for the last barrier weight, where the Newton
decrement is driven below ``final_decrement``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

ALPHA = 0.01
BETA = 0.5


@dataclass
class IpmResult:
    x: np.ndarray
    status: str  # "optimal" | "max_iter" | "no_interior"
    iterations: int  # Newton steps
    gap: float  # m / t at the last centering


class DenseFactor:
    def __init__(self, mat: np.ndarray):
        self.mat = mat
        try:
            self.cho = scipy.linalg.cho_factor(mat, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            self.cho = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.cho is not None:
            out = scipy.linalg.cho_solve(self.cho, rhs, check_finite=False)
            if np.all(np.isfinite(out)):
                return out
        return np.linalg.lstsq(self.mat, rhs, rcond=None)[0]


def _feasible_values(problem, x):
    with np.errstate(all="ignore"):
        f = problem.constraints(x)
    if not np.all(f < 0):  # rejects nan too
        return None
    return f


class _PhaseOne:
    """min s  s.t.  f_i(x) <= s,  s >= -1; the last coordinate of z is s."""

    def __init__(self, problem):
        self.p = problem
        self.n = problem.n + 1

    def objective(self, z):
        return float(z[-1])

    def objective_grad(self, z):
        g = np.zeros(self.n)
        g[-1] = 1.0
        return g

    def constraints(self, z):
        return np.append(self.p.constraints(z[:-1]) - z[-1], -z[-1] - 1.0)

    def constraint_grad_sum(self, z, w):
        g = np.empty(self.n)
        g[:-1] = self.p.constraint_grad_sum(z[:-1], w[:-1])
        g[-1] = -np.sum(w)
        return g

    def kkt_factor(self, z, w_outer, w_curv, obj_weight=1.0):
        x = z[:-1]
        inner = self.p.kkt_factor(x, w_outer[:-1], w_curv[:-1], 0.0)
        # [[A, -b], [-b^T, c]] with b = sum w_i grad f_i, solved by a Schur complement on s
        b = self.p.constraint_grad_sum(x, w_outer[:-1])
        c = float(np.sum(w_outer))
        ainv_b = inner.solve(b)
        schur = c - float(b @ ainv_b)
        return _BorderedFactor(inner, b, ainv_b, schur)


class _BorderedFactor:
    def __init__(self, inner, b, ainv_b, schur):
        self.inner, self.b, self.ainv_b, self.schur = inner, b, ainv_b, schur

    def solve(self, rhs):
        r1, r2 = rhs[:-1], rhs[-1]
        y = self.inner.solve(r1)
        ds = (r2 + float(self.b @ y)) / self.schur if self.schur > 0 else 0.0
        return np.append(y + self.ainv_b * ds, ds)


def _barrier_value(problem, t, x, f):
    return t * problem.objective(x) - float(np.sum(np.log(-f)))


def barrier(
    problem,
    x0: np.ndarray,
    gap_tol: float = 1e-6,
    t0: float = 10.0,
    mu: float = 30.0,
    mid_decrement: float = 0.1,
    final_decrement: float = 1e-5,
    max_newton: int = 400,
    stop_when_negative: bool = False,
) -> IpmResult:
    """Minimise from a strictly feasible ``x0``; the duality gap of the result is at most ``gap_tol``."""
    x = np.asarray(x0, dtype=float).copy()
    f = _feasible_values(problem, x)
    if f is None:
        raise ValueError("barrier start point must be strictly feasible")
    m = len(f)
    t_final = m / gap_tol
    t = min(t0, t_final)
    steps = 0
    while True:
        last = t >= t_final
        tol = final_decrement if last else mid_decrement
        while True:
            if stop_when_negative and problem.objective(x) < 0:
                return IpmResult(x, "optimal", steps, m / t)
            s = -f
            g = t * problem.objective_grad(x) + problem.constraint_grad_sum(x, 1.0 / s)
            dx = problem.kkt_factor(x, 1.0 / s**2, 1.0 / s, obj_weight=t).solve(-g)
            dec = -float(g @ dx)
            if not np.isfinite(dec):
                return IpmResult(x, "max_iter", steps, m / t)
            if dec <= 2 * tol:
                break
            if steps >= max_newton:
                return IpmResult(x, "max_iter", steps, m / t)
            steps += 1
            phi = _barrier_value(problem, t, x, f)
            step = 1.0
            while True:
                xn = x + step * dx
                fn = _feasible_values(problem, xn)
                if fn is not None and _barrier_value(problem, t, xn, fn) <= phi - ALPHA * step * dec:
                    break
                step *= BETA
                if step < 1e-12:
                    # round-off floor: no further decrease at this weight
                    fn = None
                    break
            if fn is None:
                break
            x, f = xn, fn
        if last:
            return IpmResult(x, "optimal", steps, m / t)
        t = min(t * mu, t_final)


def find_interior(problem, x0: np.ndarray, max_newton: int = 200):
    """Strictly feasible point from a feasible or nearly feasible ``x0``; None when none is found."""
    x0 = np.asarray(x0, dtype=float)
    if _feasible_values(problem, x0) is not None:
        return x0, 0
    guess = getattr(problem, "interior_guess", None)
    if guess is not None:
        x1 = guess(x0)
        if _feasible_values(problem, x1) is not None:
            return x1, 0
    with np.errstate(all="ignore"):
        raw = problem.constraints(x0)
    if not np.all(np.isfinite(raw)):
        return None, 0
    s0 = max(float(raw.max()), 0.0) * 1.1 + 1e-3
    phase = _PhaseOne(problem)
    res = barrier(phase, np.append(x0, s0), gap_tol=1e-9, t0=1.0, max_newton=max_newton, stop_when_negative=True)
    if res.x[-1] < 0:
        return res.x[:-1], res.iterations
    return None, res.iterations


def solve(problem, x0: np.ndarray, gap_tol: float = 1e-6, max_newton: int = 400) -> IpmResult:
    """Phase I (when needed) followed by the barrier iteration."""
    x0 = np.asarray(x0, dtype=float)
    x, used = find_interior(problem, x0)
    if x is None:
        return IpmResult(x0, "no_interior", used, np.inf)
    res = barrier(problem, x, gap_tol=gap_tol, max_newton=max_newton)
    res.iterations += used
    return res
