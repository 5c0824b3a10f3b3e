import json
import math

import numpy as np
import pytest

from uavisac.energy import hover_power, propulsion_power, trajectory_energy
from uavisac.errors import InfeasibleError
from uavisac.mission import StageCache, monte_carlo_mission, run_mission


@pytest.fixture(scope="module")
def small(scenario):
    return scenario.replace(energy={"e_tot": 20000.0})


@pytest.fixture(scope="module")
def reports(small):
    cache = StageCache()
    return {s: run_mission(small, strategy=s, cache=cache) for s in ("multi_stage", "one_stage", "straight", "comm_only", "sense_only")}


def test_energy_ledger(small, reports):
    for rep in reports.values():
        total = trajectory_energy(rep.trajectory, small).total
        assert total <= small.energy.e_tot * (1 + 1e-6)
        assert rep.energy["total"] == pytest.approx(total, rel=1e-12)
        assert math.fsum(s.energy_used for s in rep.stages) == pytest.approx(total, rel=1e-12)
        for s in rep.stages:
            assert s.energy_used <= s.e_budget * (1 + 1e-6)


def test_energy_driven_stages_use_the_budget(small, reports):
    rep = reports["multi_stage"]
    assert [s.n_wp for s in rep.stages[:-1]] == [25] * (len(rep.stages) - 1)
    # what is left cannot pay for one more cruise waypoint
    left = small.energy.e_tot - rep.energy["total"]
    assert left < small.sys.t_fly * propulsion_power(small.sys.v_str, small.energy) + hover_power(small.energy)


def test_hover_cadence_and_stage_continuity(small, reports):
    mu = small.sys.mu
    for name in ("multi_stage", "one_stage", "comm_only", "sense_only"):
        traj = reports[name].trajectory
        assert np.all(np.diff(traj.stage_of) >= 0)
        offset = 0
        expected = []
        for s in reports[name].stages:
            expected.extend(offset + np.arange(mu - 1, s.n_wp, mu))
            offset += s.n_wp
        np.testing.assert_array_equal(traj.hover_indices, expected)
        np.testing.assert_allclose(traj.start, small.base)


def test_fixed_total_split(small):
    rep = run_mission(small.replace(energy={"e_tot": 35000.0}), n_tot=80, n_stg=25)
    assert [s.n_wp for s in rep.stages] == [25, 25, 25, 5]
    assert rep.n_waypoints == 80 and rep.n_hovers == 16


def test_one_stage_plans_everything_at_once(reports):
    rep = reports["one_stage"]
    assert len(rep.stages) == 1
    assert rep.n_waypoints >= reports["multi_stage"].n_waypoints - 5


def test_straight_baseline_hovers_at_the_end(small, reports):
    rep = reports["straight"]
    traj = rep.trajectory
    assert np.all(traj.hover_indices == len(traj) - 1)
    flight = trajectory_energy(type(traj).from_waypoints(traj.start, traj.waypoints, small.sys.t_fly), small).total
    assert rep.n_hovers == int((small.energy.e_tot - flight) // (small.sys.t_hover * hover_power(small.energy)))
    speeds = np.hypot(*traj.velocities.T)
    assert np.all(speeds <= small.sys.v_str + 1e-9)


def test_weighting_extremes(reports):
    assert reports["comm_only"].eta == 0.0 and reports["sense_only"].eta == 1.0
    assert reports["comm_only"].avg_rate >= reports["multi_stage"].avg_rate >= reports["sense_only"].avg_rate
    assert reports["sense_only"].crb_true <= reports["comm_only"].crb_true


def test_report_serialises(reports):
    for rep in reports.values():
        d = json.loads(rep.to_json())
        assert d["strategy"] == rep.strategy
        assert len(d["trajectory"]["waypoints"]) == rep.n_waypoints
        assert "trace" not in rep.to_dict(with_traces=False)["stages"][0]


def test_estimates_refined(small):
    stats = monte_carlo_mission(small, "multi_stage", 5, keep_reports=True)
    start_err = math.dist(small.first_estimate, small.target_true) ** 2
    better = sum(rep.error_sq < start_err for rep in stats.reports)
    assert better >= 0.8 * len(stats.reports)
    assert stats.mse == pytest.approx(np.mean([r.error_sq for r in stats.reports]))


def test_same_run_is_reproducible(small):
    a = run_mission(small, run=3)
    b = run_mission(small, run=3)
    assert a.to_json() == b.to_json()
    c = run_mission(small, run=4)
    assert c.estimate != a.estimate


def test_cache_reuses_identical_stages(small):
    cache = StageCache()
    run_mission(small, strategy="one_stage", run=0, cache=cache)
    run_mission(small, strategy="one_stage", run=1, cache=cache)
    assert cache.hits >= 1


def test_bad_inputs(small):
    with pytest.raises(InfeasibleError):
        run_mission(small.replace(energy={"e_tot": 100.0}))
    with pytest.raises(ValueError):
        run_mission(small, strategy="zigzag")
