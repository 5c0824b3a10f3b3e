"""Piecewise-constant-velocity trajectory: waypoints, segment velocities, hovering points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def segment_velocities(start: np.ndarray, waypoints: np.ndarray, t_fly: float) -> np.ndarray:
    """v(n) = (s(n) - s(n-1)) / Tf with s(0) = start."""
    waypoints = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    prev = np.vstack([np.asarray(start, dtype=float).reshape(1, 2), waypoints[:-1]])
    return (waypoints - prev) / t_fly


def cadence_hover_indices(n_waypoints: int, mu: int) -> np.ndarray:
    """0-based indices of s(mu*k), k = 1..floor(N/mu)."""
    return np.arange(mu - 1, n_waypoints, mu, dtype=int)


@dataclass
class Trajectory:
    """Waypoints flown from ``start``; ``hover_indices`` may repeat an index for extra hovers there."""

    start: np.ndarray
    waypoints: np.ndarray
    velocities: np.ndarray
    hover_indices: np.ndarray
    t_fly: float
    stage_of: np.ndarray = field(default=None)  # stage number of each waypoint

    def __post_init__(self) -> None:
        self.start = np.asarray(self.start, dtype=float).reshape(2)
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        self.hover_indices = np.asarray(self.hover_indices, dtype=int).reshape(-1)
        if self.stage_of is None:
            self.stage_of = np.ones(len(self.waypoints), dtype=int)
        self.stage_of = np.asarray(self.stage_of, dtype=int).reshape(-1)
        if len(self.velocities) != len(self.waypoints):
            raise ValueError(
                f"{len(self.waypoints)} waypoints but {len(self.velocities)} velocities"
            )
        if len(self.stage_of) != len(self.waypoints):
            raise ValueError("stage_of must have one entry per waypoint")
        expected = segment_velocities(self.start, self.waypoints, self.t_fly)
        scale = 1.0 + np.abs(expected).max(initial=0.0)
        if not np.allclose(self.velocities, expected, rtol=0.0, atol=1e-9 * scale):
            raise ValueError("velocities are inconsistent with the waypoints")
        if len(self.hover_indices) and (
            self.hover_indices.min() < 0 or self.hover_indices.max() >= len(self.waypoints)
        ):
            raise ValueError("hover index out of range")

    @classmethod
    def from_waypoints(
        cls,
        start,
        waypoints,
        t_fly: float,
        mu: int | None = None,
        hover_indices=None,
        stage: int = 1,
    ) -> Trajectory:
        waypoints = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        if hover_indices is None:
            hover_indices = cadence_hover_indices(len(waypoints), mu) if mu else []
        return cls(
            start=start,
            waypoints=waypoints,
            velocities=segment_velocities(start, waypoints, t_fly),
            hover_indices=np.asarray(hover_indices, dtype=int),
            t_fly=t_fly,
            stage_of=np.full(len(waypoints), stage, dtype=int),
        )

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def speeds(self) -> np.ndarray:
        return np.hypot(self.velocities[:, 0], self.velocities[:, 1])

    @property
    def hovers(self) -> np.ndarray:
        return self.waypoints[self.hover_indices]

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1] if len(self.waypoints) else self.start

    def concat(self, other: Trajectory) -> Trajectory:
        """Append ``other``, which must start at this trajectory's last waypoint."""
        if not np.allclose(other.start, self.end, atol=1e-9):
            raise ValueError("trajectories are not contiguous")
        return Trajectory(
            start=self.start,
            waypoints=np.vstack([self.waypoints, other.waypoints]),
            velocities=np.vstack([self.velocities, other.velocities]),
            hover_indices=np.concatenate([self.hover_indices, other.hover_indices + len(self)]),
            t_fly=self.t_fly,
            stage_of=np.concatenate([self.stage_of, other.stage_of]),
        )
