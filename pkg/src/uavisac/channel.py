"""LoS downlink rate and mono-static radar link budget."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


@dataclass(frozen=True)
class CommSample:
    distance: float
    snr: float
    rate: float


@dataclass(frozen=True)
class RadarLink:
    distance: float
    two_way_gain: float
    snr: float
    meas_var: float


def comm_rates(points, scenario: Scenario) -> np.ndarray:
    """Vectorised rate in bit/s for an (n, 2) array of UAV positions."""
    sys = scenario.sys
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    d2 = sys.altitude**2 + np.sum((pts - np.asarray(scenario.user)) ** 2, axis=1)
    return sys.bandwidth * np.log2(1.0 + sys.comm_snr_ref / d2)


def comm_rate(uav_xy, scenario: Scenario) -> CommSample:
    sys = scenario.sys
    p = np.asarray(uav_xy, dtype=float)
    d2 = sys.altitude**2 + float(np.sum((p - np.asarray(scenario.user)) ** 2))
    snr = sys.comm_snr_ref / d2
    return CommSample(distance=float(np.sqrt(d2)), snr=snr, rate=sys.bandwidth * float(np.log2(1.0 + snr)))


def avg_rate(traj, scenario: Scenario) -> float:
    """Mean rate over waypoints.

    ``traj`` is an (n, 2) array, a :class:`~uavisac.trajectory.Trajectory`, or a list
    of per-stage waypoint arrays; the latter are pooled into one mean over all
    waypoints of all stages.
    """
    if isinstance(traj, (list, tuple)) and traj and np.ndim(traj[0]) == 2:
        pts = np.vstack([np.asarray(t, dtype=float).reshape(-1, 2) for t in traj])
    else:
        pts = getattr(traj, "waypoints", traj)
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("average rate of an empty trajectory is undefined")
    return float(np.mean(comm_rates(pts, scenario)))


def radar_variance_coeff(scenario: Scenario) -> float:
    """c in sigma^2 = c * d^4, i.e. a*sigma0^2 / (P*Gp*beta0)."""
    return 1.0 / scenario.sys.radar_info_gain


def radar_distance(hover_xy, target_xy, scenario: Scenario) -> np.ndarray:
    h = np.asarray(hover_xy, dtype=float)
    t = np.asarray(target_xy, dtype=float)
    return np.sqrt(scenario.sys.altitude**2 + np.sum((h - t) ** 2, axis=-1))


def radar_link(hover_xy, target_xy, scenario: Scenario) -> RadarLink:
    sys = scenario.sys
    d = float(radar_distance(hover_xy, target_xy, scenario))
    g = sys.beta0 / d**4
    snr = sys.tx_power * sys.proc_gain * g / sys.noise_power
    var = sys.a * sys.noise_power * d**4 / (sys.tx_power * sys.proc_gain * sys.beta0)
    return RadarLink(distance=d, two_way_gain=g, snr=snr, meas_var=var)
