"""Simulated radar ranges, grid-search maximum-likelihood localisation, Monte-Carlo MSE."""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import radar_link, radar_variance_coeff
from .scenario import Scenario, new_rng

# (step, half-width) per pass; None half-width means the whole area
DEFAULT_PASSES = ((5.0, None), (0.1, 10.0), (0.005, 0.25))
CSV_COLUMNS = ("stage", "index", "hover_x", "hover_y", "d_hat", "variance")


class AmbiguousEstimateWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Measurement:
    stage: int
    index: int
    hover_x: float
    hover_y: float
    d_hat: float
    variance: float

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError("measurement variance must be positive and finite")
        if not math.isfinite(self.d_hat):
            raise ValueError("measured distance must be finite")


@dataclass
class MeasurementSet:
    entries: list[Measurement] = field(default_factory=list)

    def add(self, m: Measurement) -> None:
        if self.entries and (m.stage, m.index) < (self.entries[-1].stage, self.entries[-1].index):
            raise ValueError("measurements must be appended in (stage, index) order")
        self.entries.append(m)

    def extend(self, ms) -> None:
        for m in ms:
            self.add(m)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def hovers(self) -> np.ndarray:
        return np.array([[m.hover_x, m.hover_y] for m in self.entries], dtype=float).reshape(-1, 2)

    @property
    def d_hat(self) -> np.ndarray:
        return np.array([m.d_hat for m in self.entries], dtype=float)

    @property
    def variances(self) -> np.ndarray:
        return np.array([m.variance for m in self.entries], dtype=float)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for m in self.entries:
                w.writerow([m.stage, m.index, repr(m.hover_x), repr(m.hover_y), repr(m.d_hat), repr(m.variance)])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> MeasurementSet:
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ValueError(f"expected columns {CSV_COLUMNS}, got {reader.fieldnames}")
            for row in reader:
                out.add(
                    Measurement(
                        int(row["stage"]),
                        int(row["index"]),
                        float(row["hover_x"]),
                        float(row["hover_y"]),
                        float(row["d_hat"]),
                        float(row["variance"]),
                    )
                )
        return out


@dataclass(frozen=True)
class EstimateReport:
    estimate: tuple[float, float]
    log_likelihood: float
    grid_resolution: float
    mse: float | None = None
    ambiguous: bool = False


def simulate_measurement(
    hover_xy, scenario: Scenario, rng: np.random.Generator, stage: int = 1, index: int = 1, noiseless: bool = False
) -> Measurement:
    """Range to the true target plus Gaussian noise whose variance follows the true distance."""
    link = radar_link(hover_xy, scenario.target_true, scenario)
    noise = 0.0 if noiseless else float(rng.normal(0.0, math.sqrt(link.meas_var)))
    x, y = (float(v) for v in np.asarray(hover_xy, dtype=float).reshape(2))
    return Measurement(stage, index, x, y, link.distance + noise, link.meas_var)


def simulate_measurements(hovers, scenario: Scenario, rng, stage: int = 1, noiseless: bool = False):
    return [
        simulate_measurement(h, scenario, rng, stage=stage, index=j + 1, noiseless=noiseless)
        for j, h in enumerate(np.asarray(hovers, dtype=float).reshape(-1, 2))
    ]


def log_likelihood(candidates, meas: MeasurementSet, scenario: Scenario, likelihood: str | None = None) -> np.ndarray:
    """Gaussian log-likelihood of each candidate target position ((M, 2) array)."""
    mode = likelihood or scenario.experiment.likelihood
    if mode not in ("candidate", "measured"):
        raise ValueError(f"unknown likelihood mode {mode!r}")
    cand = np.asarray(candidates, dtype=float).reshape(-1, 2)
    h = meas.hovers
    d_hat = meas.d_hat
    # in-place arithmetic on (M, K) blocks; this is the hot loop of every estimate
    d2 = np.subtract.outer(cand[:, 0], h[:, 0])
    d2 *= d2
    dy = np.subtract.outer(cand[:, 1], h[:, 1])
    dy *= dy
    d2 += dy
    d2 += scenario.sys.altitude ** 2
    resid = np.sqrt(d2)
    np.subtract(d_hat, resid, out=resid)
    resid *= resid
    if mode == "measured":
        var = meas.variances
        return -0.5 * (resid @ (1.0 / var) + math.fsum(np.log(2.0 * np.pi * var)))
    c = radar_variance_coeff(scenario)
    d4 = np.multiply(d2, d2, out=d2)
    resid /= d4
    resid *= 1.0 / c
    np.log(d4, out=d4)
    resid += d4
    return -0.5 * (resid.sum(axis=1) + len(d_hat) * math.log(2.0 * np.pi * c))


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1)


def _grid(xs, ys) -> np.ndarray:
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _chunked_ll(pts, meas, scenario, likelihood, chunk=2048):
    return np.concatenate(
        [log_likelihood(pts[i : i + chunk], meas, scenario, likelihood) for i in range(0, len(pts), chunk)]
    )


def mle_estimate(
    meas: MeasurementSet, scenario: Scenario, passes=DEFAULT_PASSES, likelihood: str | None = None
) -> EstimateReport:
    """Grid-search MLE: a coarse pass over the area, then windows refined around each argmax."""
    if len(meas) == 0:
        raise ValueError("cannot estimate a target from an empty measurement set")
    sys = scenario.sys
    ambiguous = len(meas) < 2
    best = None
    best_ll = -math.inf
    step = None
    for k, (step, half) in enumerate(passes):
        if half is None:
            xs, ys = _axis(0.0, sys.lx, step), _axis(0.0, sys.ly, step)
        else:
            cx, cy = best
            xs = np.clip(cx + _axis(-half, half, step), 0.0, sys.lx)
            ys = np.clip(cy + _axis(-half, half, step), 0.0, sys.ly)
            xs, ys = np.unique(xs), np.unique(ys)
        pts = _grid(xs, ys)
        ll = _chunked_ll(pts, meas, scenario, likelihood)
        i = int(np.argmax(ll))
        if k == 0:
            ambiguous = ambiguous or _far_ties(pts, ll, i, 2.0 * step)
        # refinement windows include the previous argmax, so never worse
        if ll[i] >= best_ll:
            best, best_ll = (float(pts[i, 0]), float(pts[i, 1])), float(ll[i])
    if ambiguous:
        warnings.warn(
            "likelihood has several equally good maxima; returning the first",
            AmbiguousEstimateWarning,
            stacklevel=2,
        )
    return EstimateReport(best, best_ll, step, ambiguous=ambiguous)


def _far_ties(pts, ll, i, radius) -> bool:
    top = ll[i]
    tied = np.flatnonzero(ll >= top - 1e-9 * max(1.0, abs(top)))
    if len(tied) < 2:
        return False
    return bool(np.any(np.hypot(*(pts[tied] - pts[i]).T) > radius))


@dataclass(frozen=True)
class MonteCarloResult:
    mse: float
    mean_error: tuple[float, float]
    runs: int
    estimates: np.ndarray


def monte_carlo(
    hover_sets, scenario: Scenario, runs: int, seed: int | None = None, passes=DEFAULT_PASSES, noiseless=False
) -> MonteCarloResult:
    """Fresh measurements per run at fixed hovering geometry."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    seed = scenario.seed if seed is None else seed
    sets = [np.asarray(h, dtype=float).reshape(-1, 2) for h in hover_sets]
    truth = np.asarray(scenario.target_true, dtype=float)
    est = np.empty((runs, 2))
    for r in range(runs):
        rng = new_rng(seed, f"mc-measure/{r}")
        meas = MeasurementSet()
        for m, h in enumerate(sets, start=1):
            meas.extend(simulate_measurements(h, scenario, rng, stage=m, noiseless=noiseless))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AmbiguousEstimateWarning)
            est[r] = mle_estimate(meas, scenario, passes).estimate
    err = est - truth
    sq = np.sum(err * err, axis=1)
    return MonteCarloResult(
        math.fsum(sq) / runs,
        (math.fsum(err[:, 0]) / runs, math.fsum(err[:, 1]) / runs),
        runs,
        est,
    )


def monte_carlo_mse(hover_sets, scenario: Scenario, runs: int, seed: int | None = None, **kw) -> float:
    return monte_carlo(hover_sets, scenario, runs, seed, **kw).mse
