"""Rotary-wing propulsion power and trajectory energy accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import EnergyParams, Scenario
from .trajectory import Trajectory


@dataclass(frozen=True)
class EnergyBreakdown:
    blade_profile: float
    induced: float
    parasite: float
    hover: float
    total: float


def _terms(speed, ep: EnergyParams):
    v = np.asarray(speed, dtype=float)
    blade = ep.p0 * (1.0 + 3.0 * v**2 / ep.u_tip**2)
    induced = ep.pi * np.sqrt(induced_slack_sq(v, ep))
    parasite = 0.5 * ep.d0 * ep.rho * ep.s * ep.area_a * v**3
    return blade, induced, parasite


def induced_slack_sq(speed, ep: EnergyParams):
    """delta^2 = sqrt(1 + V^4/(4 v0^4)) - V^2/(2 v0^2), written in a cancellation-free form."""
    v = np.asarray(speed, dtype=float)
    q = v**2 / (2.0 * ep.v0**2)
    return 1.0 / (np.sqrt(1.0 + q**2) + q)


def induced_slack(speed, ep: EnergyParams):
    return np.sqrt(induced_slack_sq(speed, ep))


def propulsion_power(speed, energy_params: EnergyParams):
    """P(V) in W; accepts scalars or arrays."""
    if np.any(np.asarray(speed) < 0):
        raise ValueError("speed must be non-negative")
    blade, induced, parasite = _terms(speed, energy_params)
    total = blade + induced + parasite
    return float(total) if np.ndim(total) == 0 else total


def hover_power(energy_params: EnergyParams) -> float:
    return energy_params.p0 + energy_params.pi


def trajectory_energy(traj: Trajectory, scenario: Scenario) -> EnergyBreakdown:
    sys, ep = scenario.sys, scenario.energy
    if len(traj.velocities) != len(traj.waypoints):
        raise ValueError("waypoint and velocity counts differ")
    blade, induced, parasite = _terms(traj.speeds, ep)
    hover = sys.t_hover * len(traj.hover_indices) * hover_power(ep)
    parts = [sys.t_fly * float(np.sum(blade)), sys.t_fly * float(np.sum(induced)),
             sys.t_fly * float(np.sum(parasite)), hover]
    return EnergyBreakdown(*parts, total=math.fsum(parts))


def straight_cost(n: int, scenario: Scenario, speed: float | None = None) -> float:
    """Energy of n waypoints at constant speed (default V_str) with cadence hovering."""
    sys, ep = scenario.sys, scenario.energy
    v = sys.v_str if speed is None else speed
    return n * sys.t_fly * propulsion_power(v, ep) + (n // sys.mu) * sys.t_hover * hover_power(ep)


def e_min(n_stg: int, scenario: Scenario) -> float:
    """Loop guard of the multi-stage protocol: one full stage flown at V_str."""
    return straight_cost(n_stg, scenario)


def max_waypoints_for_energy(e_remaining: float, scenario: Scenario) -> tuple[int, int]:
    """Largest (N, floor(N/mu)) whose V_str flight plus hovering fits into ``e_remaining``."""
    if e_remaining < 0:
        raise ValueError("remaining energy must be non-negative")
    sys = scenario.sys
    seg = sys.t_fly * propulsion_power(sys.v_str, scenario.energy)
    # cost grows by at least one segment per waypoint, so this bounds the search
    n = int(e_remaining // seg) + 1
    while n > 0 and straight_cost(n, scenario) > e_remaining:
        n -= 1
    return n, n // sys.mu
