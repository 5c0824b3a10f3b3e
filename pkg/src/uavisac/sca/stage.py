"""Successive convex approximation loop for one stage."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from ..energy import induced_slack
from ..errors import InfeasibleError
from ..scenario import Scenario
from ..trajectory import segment_velocities
from .subproblem import (
    StageIterate,
    StageProblem,
    build_subproblem,
    make_iterate,
    solve_subproblem,
    tighten,
    true_metrics,
)

OMEGA_GRID = np.linspace(0.0, 1.0, 21)
# tried only when no grid step improves; the direction is still a descent
# direction, so a short enough step usually does
OMEGA_FALLBACK = 0.05 * 0.5 ** np.arange(1, 11)


@dataclass
class StageResult:
    iterate: StageIterate
    problem: StageProblem
    trace: list[dict] = field(default_factory=list)
    degraded: bool = False

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1


def straight_waypoints(start, goal, n: int, speed: float, t_fly: float, box: tuple[float, float]) -> np.ndarray:
    """n waypoints from ``start`` toward ``goal`` spaced speed*t_fly apart, parked at the goal on arrival."""
    start = np.asarray(start, dtype=float)
    goal = np.clip(np.asarray(goal, dtype=float), 0.0, box)
    gap = goal - start
    dist = float(np.hypot(*gap))
    travelled = np.minimum(np.arange(1, n + 1) * speed * t_fly, dist)
    if dist == 0.0:
        pts = np.repeat(goal[None, :], n, axis=0)
    else:
        pts = start + np.outer(travelled / dist, gap)
    return np.clip(pts, 0.0, box)


def initial_iterate(prob: StageProblem, scenario: Scenario | None = None) -> StageIterate:
    sc = scenario or prob.scenario
    sys = sc.sys
    if prob.hover_only_cost() + prob.n_wp * sys.t_fly * sc.energy.p0 >= prob.e_budget:
        raise InfeasibleError("stage budget does not cover hovering plus minimum blade-profile power")
    goal = 0.5 * (np.asarray(prob.target_estimate, dtype=float) + np.asarray(sc.user, dtype=float))
    box = (sys.lx, sys.ly)
    # slow down from V_str until the straight path fits the budget
    for speed in np.linspace(sys.v_str, 0.0, 201):
        pts = straight_waypoints(prob.start, goal, prob.n_wp, float(speed), sys.t_fly, box)
        it = _equality_iterate(prob, pts)
        if it.feasible:
            return it
    raise InfeasibleError("no straight initial path satisfies the stage energy budget")


def _equality_iterate(prob: StageProblem, waypoints: np.ndarray, **extra) -> StageIterate:
    v = segment_velocities(prob.start, waypoints, prob.scenario.sys.t_fly)
    delta = induced_slack(np.hypot(v[:, 0], v[:, 1]), prob.scenario.energy)
    return make_iterate(prob, waypoints, delta, delta**2, **extra)


def with_scales(prob: StageProblem, init: StageIterate) -> StageProblem:
    """Fix objective normalisation at the initial iterate (drops the sensing term if its CRB is singular)."""
    if prob.crb_scale is not None and prob.rate_scale is not None:
        return prob
    crb_scale = init.crb if math.isfinite(init.crb) and init.crb > 0 else None
    crb_scale = prob.crb_scale if prob.crb_scale is not None else crb_scale
    rate_scale = prob.rate_scale if prob.rate_scale is not None else init.rate
    return dataclasses.replace(prob, crb_scale=crb_scale, rate_scale=rate_scale)


def interpolate(prob: StageProblem, prev: StageIterate, opt: StageIterate, omega: float) -> StageIterate:
    """Point prev + omega*(opt - prev) applied to every variable."""
    x = prev.as_vector() + omega * (opt.as_vector() - prev.as_vector())
    if omega == 1.0:
        x = opt.as_vector()
    n = prob.n_wp
    s = np.column_stack([x[:n], x[n : 2 * n]])
    return make_iterate(prob, s, x[2 * n : 3 * n], x[3 * n :], step=float(omega))


def line_search(
    prob: StageProblem, prev: StageIterate, opt: StageIterate, grid=OMEGA_GRID, fallback=OMEGA_FALLBACK
) -> StageIterate:
    best = dataclasses.replace(prev, step=0.0)
    for omega in grid:
        if omega == 0.0:
            continue
        cand = interpolate(prob, prev, opt, float(omega))
        # strict improvement required, so ties keep the smaller step
        if cand.objective < best.objective:
            best = cand
    if best.step == 0.0:
        for omega in fallback:
            cand = interpolate(prob, prev, opt, float(omega))
            if cand.objective < best.objective:
                return cand
    return best


def _record(k: int, it: StageIterate, status: str) -> dict:
    return {
        "iteration": k,
        "crb": it.crb,
        "rate": it.rate,
        "objective": it.objective,
        "step": it.step,
        "status": status,
    }


def optimize_stage(
    prob: StageProblem,
    init: StageIterate | None = None,
    max_iter: int | None = None,
    tol: float | None = None,
) -> StageResult:
    exp = prob.scenario.experiment
    max_iter = exp.max_sca_iter if max_iter is None else max_iter
    tol = exp.sca_tol if tol is None else tol
    if init is None:
        init = initial_iterate(prob)
    prob = with_scales(prob, init)
    current = _equality_iterate(prob, init.waypoints)
    if not current.feasible:
        raise InfeasibleError("initial stage iterate violates the stage constraints")
    trace = [_record(0, current, "init")]
    degraded = False
    for k in range(1, max_iter + 1):
        current = tighten(prob, current)
        sub = build_subproblem(prob, current)
        opt = solve_subproblem(sub)
        if opt.status == "no_interior":
            degraded = True
            trace.append(_record(k, dataclasses.replace(current, step=0.0), opt.status))
            break
        degraded = degraded or opt.status != "optimal"
        nxt = line_search(prob, current, opt)
        trace.append(_record(k, nxt, opt.status))
        prev_obj = current.objective
        current = nxt
        if not nxt.step:
            break
        if abs(prev_obj - nxt.objective) <= tol * max(abs(prev_obj), 1e-12):
            break
    best = tighten(prob, current)
    obj, crb, rate = true_metrics(prob, best.waypoints)
    best = dataclasses.replace(best, objective=obj, crb=crb, rate=rate)
    return StageResult(best, prob, trace, degraded)
