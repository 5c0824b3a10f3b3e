"""Multi-stage sense-and-serve missions and the baseline strategies they are compared with."""

from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import avg_rate
from .crb import crb_sum_multistage
from .energy import (
    e_min,
    hover_power,
    max_waypoints_for_energy,
    propulsion_power,
    straight_cost,
    trajectory_energy,
)
from .errors import InfeasibleError, SingularFIMError
from .estimator import AmbiguousEstimateWarning, MeasurementSet, mle_estimate, simulate_measurements
from .scenario import STRATEGIES, Scenario, new_rng
from .sca import StageProblem, optimize_stage
from .sca.stage import straight_waypoints
from .trajectory import Trajectory, cadence_hover_indices

ENERGY_RTOL = 1e-6


@dataclass
class StageSummary:
    stage: int
    n_wp: int
    k_hover: int
    e_budget: float
    energy_used: float
    estimate_before: tuple[float, float]
    estimate_after: tuple[float, float]
    crb_believed: float
    crb_true: float
    iterations: int
    degraded: bool
    trace: list[dict] = field(default_factory=list)


@dataclass
class StageState:
    """Book-keeping carried from one stage to the next."""

    stage: int
    e_remaining: float
    estimate: np.ndarray
    position: np.ndarray
    all_hovers: list[np.ndarray] = field(default_factory=list)
    all_waypoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    trajectory: Trajectory | None = None
    measurements: MeasurementSet = field(default_factory=MeasurementSet)
    traces: list[list[dict]] = field(default_factory=list)


@dataclass
class MissionReport:
    strategy: str
    eta: float
    n_stg: int | None
    e_tot: float
    seed: int
    run: int
    estimate: tuple[float, float]
    error_sq: float
    avg_rate: float
    crb_true: float
    crb_believed: float
    energy: dict
    n_waypoints: int
    n_hovers: int
    stages: list[StageSummary]
    trajectory: Trajectory

    def to_dict(self, with_traces: bool = True) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, np.generic):
                return clean(v.item())
            return v

        stages = []
        for s in self.stages:
            d = dataclasses.asdict(s)
            if not with_traces:
                d.pop("trace")
            stages.append(d)
        traj = self.trajectory
        return clean(
            {
                "strategy": self.strategy,
                "eta": self.eta,
                "n_stg": self.n_stg,
                "e_tot": self.e_tot,
                "seed": self.seed,
                "run": self.run,
                "estimate": list(self.estimate),
                "error_sq": self.error_sq,
                "avg_rate": self.avg_rate,
                "crb_true": self.crb_true,
                "crb_believed": self.crb_believed,
                "energy": self.energy,
                "n_waypoints": self.n_waypoints,
                "n_hovers": self.n_hovers,
                "stages": stages,
                "trajectory": {
                    "start": traj.start.tolist(),
                    "waypoints": traj.waypoints.tolist(),
                    "hover_indices": traj.hover_indices.tolist(),
                    "stage_of": traj.stage_of.tolist(),
                },
            }
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2, sort_keys=True)


# ------------------------------------------------------------------ helpers


def _crb_or_inf(hover_sets, point, sc: Scenario) -> float:
    try:
        return crb_sum_multistage(hover_sets, point, sc).crb_sum
    except (SingularFIMError, ValueError):
        return math.inf


class StageCache:
    """Memo of stage optimisations; a stage result depends only on its problem inputs."""

    def __init__(self):
        self._store: dict = {}
        self.hits = 0

    @staticmethod
    def key(prob: StageProblem):
        return (
            prob.scenario,
            prob.n_wp,
            tuple(np.asarray(prob.start, dtype=float).tolist()),
            tuple(np.asarray(prob.target_estimate, dtype=float).tolist()),
            float(prob.e_budget),
            float(prob.eta),
            tuple(h.tobytes() for h in prob.prior_hovers),
            prob.prior_waypoints.tobytes(),
        )

    def optimize(self, prob: StageProblem):
        k = self.key(prob)
        if k in self._store:
            self.hits += 1
            return self._store[k]
        res = optimize_stage(prob)
        self._store[k] = res
        return res


def _estimate(meas: MeasurementSet, sc: Scenario, fallback) -> tuple[np.ndarray, bool]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AmbiguousEstimateWarning)
        rep = mle_estimate(meas, sc)
    if any(issubclass(w.category, AmbiguousEstimateWarning) for w in caught):
        return np.asarray(fallback, dtype=float), False
    return np.asarray(rep.estimate, dtype=float), True


def _fly_stage(state: StageState, sc: Scenario, waypoints, hover_idx, rng, summary_extra: dict) -> StageSummary:
    """Append one executed stage, measure at its hovers, and refresh the estimate."""
    m = state.stage
    traj = Trajectory.from_waypoints(state.position, waypoints, sc.sys.t_fly, hover_indices=hover_idx, stage=m)
    used = trajectory_energy(traj, sc).total
    hovers = traj.hovers
    est_before = state.estimate.copy()
    if len(hovers):
        state.measurements.extend(simulate_measurements(hovers, sc, rng, stage=m))
        state.all_hovers.append(hovers)
        state.estimate, _ = _estimate(state.measurements, sc, state.estimate)
    state.trajectory = traj if state.trajectory is None else state.trajectory.concat(traj)
    state.all_waypoints = np.vstack([state.all_waypoints, traj.waypoints])
    state.position = traj.end
    state.e_remaining -= used
    summary = StageSummary(
        stage=m,
        n_wp=len(traj),
        k_hover=len(hovers),
        energy_used=used,
        estimate_before=tuple(est_before.tolist()),
        estimate_after=tuple(state.estimate.tolist()),
        crb_believed=_crb_or_inf(state.all_hovers, state.estimate, sc) if state.all_hovers else math.inf,
        crb_true=_crb_or_inf(state.all_hovers, sc.target_true, sc) if state.all_hovers else math.inf,
        **summary_extra,
    )
    state.stage += 1
    return summary


def _optimized_stage(state: StageState, sc: Scenario, n_wp: int, budget: float, eta: float, rng, cache) -> StageSummary:
    prob = StageProblem(
        scenario=sc,
        n_wp=n_wp,
        start=tuple(state.position.tolist()),
        target_estimate=tuple(state.estimate.tolist()),
        e_budget=budget,
        eta=eta,
        stage_index=state.stage,
        prior_hovers=tuple(state.all_hovers),
        prior_waypoints=state.all_waypoints,
    )
    res = cache.optimize(prob)
    state.traces.append(res.trace)
    extra = dict(e_budget=budget, iterations=res.iterations, degraded=res.degraded, trace=res.trace)
    return _fly_stage(state, sc, res.iterate.waypoints, prob.hover_indices, rng, extra)


# --------------------------------------------------------------- strategies


def _stage_plan_fixed(n_tot: int, n_stg: int) -> list[int]:
    full, rest = divmod(n_tot, n_stg)
    return [n_stg] * full + ([rest] if rest else [])


def _run_multi_stage(state, sc, eta, n_stg, n_tot, rng, cache) -> list[StageSummary]:
    summaries = []
    if n_tot is not None:
        plan = _stage_plan_fixed(n_tot, n_stg)
        for i, n in enumerate(plan):
            # hold back what the remaining stages need at the cruise speed
            reserve = straight_cost(sum(plan[i + 1 :]), sc) if i + 1 < len(plan) else 0.0
            budget = state.e_remaining - reserve
            if budget <= 0:
                raise InfeasibleError(f"no energy left for stage {state.stage}")
            summaries.append(_optimized_stage(state, sc, n, budget, eta, rng, cache))
        return summaries
    guard = e_min(n_stg, sc)
    while state.e_remaining > guard:
        summaries.append(_optimized_stage(state, sc, n_stg, state.e_remaining, eta, rng, cache))
    n_lst, _ = max_waypoints_for_energy(state.e_remaining, sc)
    if n_lst > 0:
        summaries.append(_optimized_stage(state, sc, n_lst, state.e_remaining, eta, rng, cache))
    return summaries


def _run_one_stage(state, sc, eta, n_tot, rng, cache) -> list[StageSummary]:
    n = n_tot if n_tot is not None else max_waypoints_for_energy(state.e_remaining, sc)[0]
    if n <= 0:
        raise InfeasibleError("energy budget does not cover a single waypoint")
    return [_optimized_stage(state, sc, n, state.e_remaining, eta, rng, cache)]


def _run_straight(state, sc, rng) -> list[StageSummary]:
    """Cruise to the estimate/user midpoint without stopping, then hover there on what is left."""
    sys = sc.sys
    goal = 0.5 * (state.estimate + np.asarray(sc.user, dtype=float))
    goal = np.clip(goal, 0.0, (sys.lx, sys.ly))
    dist = float(np.hypot(*(goal - state.position)))
    step = sys.v_str * sys.t_fly
    n = max(1, math.ceil(dist / step - 1e-12))
    seg = sys.t_fly * propulsion_power(sys.v_str, sc.energy)
    # cut the flight short if the energy does not reach the goal
    n = min(n, int(state.e_remaining // seg))
    if n <= 0:
        raise InfeasibleError("energy budget does not cover a single waypoint")
    pts = straight_waypoints(state.position, goal, n, sys.v_str, sys.t_fly, (sys.lx, sys.ly))
    flight = Trajectory.from_waypoints(state.position, pts, sys.t_fly)
    left = state.e_remaining - trajectory_energy(flight, sc).total
    extra = int(max(left, 0.0) // (sys.t_hover * hover_power(sc.energy)))
    hover_idx = np.full(extra, n - 1, dtype=int)
    info = dict(e_budget=state.e_remaining, iterations=0, degraded=False, trace=[])
    return [_fly_stage(state, sc, pts, hover_idx, rng, info)]


def run_mission(
    scenario: Scenario,
    eta: float | None = None,
    n_stg: int | None = None,
    strategy: str | None = None,
    run: int = 0,
    seed: int | None = None,
    n_tot: int | None = None,
    cache: StageCache | None = None,
) -> MissionReport:
    exp = scenario.experiment
    strategy = strategy or exp.strategy
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    eta = exp.eta if eta is None else eta
    if strategy == "comm_only":
        eta = 0.0
    elif strategy == "sense_only":
        eta = 1.0
    n_stg = exp.n_stg if n_stg is None else n_stg
    n_tot = exp.n_tot if n_tot is None else n_tot
    seed = scenario.seed if seed is None else seed
    cache = cache or StageCache()
    sc = scenario.placed(run, seed)
    e_tot = sc.energy.e_tot
    if e_tot < sc.sys.t_hover * hover_power(sc.energy):
        raise InfeasibleError("total energy does not cover one hover")
    # measurement noise depends on (seed, run) only, so strategies are paired
    rng = new_rng(seed, f"measure/{run}")
    state = StageState(
        stage=1,
        e_remaining=e_tot,
        estimate=np.asarray(sc.first_estimate, dtype=float),
        position=np.asarray(sc.base, dtype=float),
    )
    if strategy in ("multi_stage", "comm_only", "sense_only"):
        stages = _run_multi_stage(state, sc, eta, n_stg, n_tot, rng, cache)
    elif strategy == "one_stage":
        stages = _run_one_stage(state, sc, eta, n_tot, rng, cache)
    else:
        stages = _run_straight(state, sc, rng)

    traj = state.trajectory
    energy = trajectory_energy(traj, sc)
    if energy.total > e_tot * (1 + ENERGY_RTOL):
        raise InfeasibleError(f"executed trajectory uses {energy.total:.3f} J of {e_tot:.3f} J")
    truth = np.asarray(sc.target_true, dtype=float)
    err = state.estimate - truth
    hovers = state.all_hovers
    return MissionReport(
        strategy=strategy,
        eta=float(eta),
        n_stg=n_stg if strategy != "straight" else None,
        e_tot=e_tot,
        seed=seed,
        run=run,
        estimate=tuple(state.estimate.tolist()),
        error_sq=float(err @ err),
        avg_rate=avg_rate(traj, sc),
        crb_true=_crb_or_inf(hovers, truth, sc) if hovers else math.inf,
        crb_believed=_crb_or_inf(hovers, state.estimate, sc) if hovers else math.inf,
        energy=dataclasses.asdict(energy),
        n_waypoints=len(traj),
        n_hovers=len(traj.hover_indices),
        stages=stages,
        trajectory=traj,
    )


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class StrategyStats:
    strategy: str
    eta: float
    e_tot: float
    n_stg: int
    runs: int
    mse: float
    crb_true: float
    avg_rate: float
    hover_count: float
    runtime_s: float
    reports: list[MissionReport] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {
            "strategy": self.strategy,
            "eta": self.eta,
            "e_tot": self.e_tot,
            "n_stg": self.n_stg,
            "runs": self.runs,
            "mse": self.mse,
            "crb": self.crb_true,
            "avg_rate": self.avg_rate,
            "hover_count": self.hover_count,
            "runtime_s": self.runtime_s,
        }


def monte_carlo_mission(
    scenario: Scenario,
    strategy: str,
    runs: int,
    eta: float | None = None,
    n_stg: int | None = None,
    n_tot: int | None = None,
    seed: int | None = None,
    keep_reports: bool = False,
    check=None,
) -> StrategyStats:
    """Repeat a mission with fresh measurement noise; crb and rate are run means."""
    t0 = time.perf_counter()
    cache = StageCache()
    reports = []
    for r in range(runs):
        rep = run_mission(scenario, eta, n_stg, strategy, run=r, seed=seed, n_tot=n_tot, cache=cache)
        if check is not None:
            check(rep)
        reports.append(rep)
    mse = math.fsum(rep.error_sq for rep in reports) / runs
    crb = math.fsum(rep.crb_true for rep in reports) / runs
    rate = math.fsum(rep.avg_rate for rep in reports) / runs
    hovers = math.fsum(rep.n_hovers for rep in reports) / runs
    first = reports[0]
    return StrategyStats(
        strategy=strategy,
        eta=first.eta,
        e_tot=scenario.energy.e_tot,
        n_stg=first.n_stg or 0,
        runs=runs,
        mse=mse,
        crb_true=crb,
        avg_rate=rate,
        hover_count=hovers,
        runtime_s=time.perf_counter() - t0,
        reports=reports if keep_reports else [],
    )


def compare_strategies(
    scenario: Scenario,
    eta_list=(0.5,),
    e_tot_list=None,
    runs: int | None = None,
    strategies=STRATEGIES,
    n_stg: int | None = None,
    n_tot: int | None = None,
    check=None,
) -> list[StrategyStats]:
    """Monte-Carlo table over (strategy, eta, total energy); eta is ignored where the strategy fixes it."""
    if not eta_list or not strategies:
        raise ValueError("eta_list and strategies must be non-empty")
    runs = scenario.experiment.runs if runs is None else runs
    e_list = [scenario.energy.e_tot] if e_tot_list is None else list(e_tot_list)
    if not e_list:
        raise ValueError("e_tot_list must be non-empty")
    out = []
    for e_tot in e_list:
        sc = scenario.replace(energy={"e_tot": float(e_tot)})
        for strategy in strategies:
            etas = eta_list if strategy in ("multi_stage", "one_stage") else eta_list[:1]
            for eta in etas:
                out.append(monte_carlo_mission(sc, strategy, runs, eta=eta, n_stg=n_stg, n_tot=n_tot, check=check))
    return out


def propulsion_summary(sc: Scenario) -> dict:
    """Reference powers handy for sizing budgets."""
    return {
        "hover_w": hover_power(sc.energy),
        "cruise_w": propulsion_power(sc.sys.v_str, sc.energy),
        "max_speed_w": propulsion_power(sc.sys.vmax, sc.energy),
    }
