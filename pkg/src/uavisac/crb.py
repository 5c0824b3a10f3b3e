"""Fisher information and Cramer-Rao bound for 2-D target position from slant ranges.

Each hovering point contributes range information with variance c*d^4. The
range FIM per measurement is 1/sigma^2 (mean term) plus 8/d^2 (the variance
depends on d as well); projecting through the direction cosines gives the
closed-form Theta_a/Theta_b/Theta_c sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import radar_distance, radar_variance_coeff
from .errors import SingularFIMError
from .scenario import Scenario

COND_LIMIT = 1e12
DET_FLOOR = 1e-30


@dataclass(frozen=True)
class CrbResult:
    theta_a: float
    theta_b: float
    theta_c: float
    crb_x: float
    crb_y: float
    crb_sum: float
    fim: np.ndarray


def _cov_term(scenario: Scenario, include_cov_term: bool | None) -> bool:
    return scenario.experiment.include_cov_term if include_cov_term is None else include_cov_term


def _offsets(hovers, target, scenario: Scenario):
    h = np.asarray(hovers, dtype=float).reshape(-1, 2)
    if len(h) == 0:
        raise ValueError("at least one hovering point is required")
    off = h - np.asarray(target, dtype=float).reshape(1, 2)
    d2 = scenario.sys.altitude**2 + np.sum(off**2, axis=1)
    return off, d2


def _weights(d2, scenario: Scenario, include_cov_term: bool):
    """w(d) such that each hover adds w * [dx^2, dy^2, dx*dy] to (Theta_a, Theta_b, Theta_c)."""
    w = scenario.sys.radar_info_gain / d2**3
    if include_cov_term:
        w = w + 8.0 / d2**2
    return w


def fim_closed_form(hovers, target, scenario: Scenario, include_cov_term: bool | None = None) -> np.ndarray:
    off, d2 = _offsets(hovers, target, scenario)
    w = _weights(d2, scenario, _cov_term(scenario, include_cov_term))
    ta = float(np.sum(w * off[:, 0] ** 2))
    tb = float(np.sum(w * off[:, 1] ** 2))
    tc = float(np.sum(w * off[:, 0] * off[:, 1]))
    return np.array([[ta, tc], [tc, tb]])


def fim_numeric(hovers, target, scenario: Scenario, include_cov_term: bool | None = None) -> np.ndarray:
    """J(u) = Q J(d) Q^T with J(d) assembled entrywise from the Gaussian FIM formula.

    Deliberately does not reuse :func:`fim_closed_form`: the covariance, its
    derivatives and the trace term are formed as explicit matrices.
    """
    h = np.asarray(hovers, dtype=float).reshape(-1, 2)
    t = np.asarray(target, dtype=float).reshape(2)
    k = len(h)
    if k == 0:
        raise ValueError("at least one hovering point is required")
    d = radar_distance(h, t, scenario)
    c = radar_variance_coeff(scenario)
    cov = np.diag(c * d**4)
    cov_inv = np.linalg.inv(cov)
    dcov = [np.diag(np.where(np.arange(k) == p, 4.0 * c * d**3, 0.0)) for p in range(k)]
    eye = np.eye(k)
    jd = np.empty((k, k))
    cov_term = _cov_term(scenario, include_cov_term)
    for p in range(k):
        for q in range(k):
            val = eye[:, p] @ cov_inv @ eye[:, q]
            if cov_term:
                val += 0.5 * np.trace(cov_inv @ dcov[p] @ cov_inv @ dcov[q])
            jd[p, q] = val
    jac = ((h - t) / d[:, None]).T  # 2 x K, d d_k / d u up to sign
    return jac @ jd @ jac.T


def _result_from_fim(fim: np.ndarray) -> CrbResult:
    ta, tb, tc = float(fim[0, 0]), float(fim[1, 1]), float(fim[0, 1])
    det = ta * tb - tc * tc
    if not np.all(np.isfinite(fim)):
        raise SingularFIMError("FIM has non-finite entries")
    trace = ta + tb
    if det <= DET_FLOOR or trace <= 0:
        raise SingularFIMError(f"FIM is singular (det={det:.3e})")
    # 2x2 SPD: eigenvalues from trace/det, robust to cancellation
    disc = np.sqrt(max((ta - tb) ** 2 + 4 * tc * tc, 0.0))
    lam_max = 0.5 * (trace + disc)
    lam_min = det / lam_max
    cond = lam_max / lam_min
    if cond > COND_LIMIT:
        raise SingularFIMError(f"FIM is ill-conditioned (cond={cond:.3e})", cond)
    crb_x = tb / det
    crb_y = ta / det
    return CrbResult(ta, tb, tc, crb_x, crb_y, crb_x + crb_y, fim)


def crb_sum(hovers, target, scenario: Scenario, include_cov_term: bool | None = None) -> CrbResult:
    return _result_from_fim(fim_closed_form(hovers, target, scenario, include_cov_term))


def crb_sum_multistage(
    stage_hovers, target_estimate, scenario: Scenario, include_cov_term: bool | None = None
) -> CrbResult:
    """CRB with information pooled over the hovering points of every stage so far."""
    sets = [np.asarray(h, dtype=float).reshape(-1, 2) for h in stage_hovers]
    sets = [h for h in sets if len(h)]
    if not sets:
        raise ValueError("no hovering points in any stage")
    fim = sum(fim_closed_form(h, target_estimate, scenario, include_cov_term) for h in sets)
    return _result_from_fim(fim)


def crb_gradient(
    hovers,
    target,
    scenario: Scenario,
    prior_fim: np.ndarray | None = None,
    include_cov_term: bool | None = None,
) -> tuple[float, np.ndarray]:
    """CRB sum and its gradient with respect to each hover's (x, y).

    ``prior_fim`` is information from earlier hovers that are held fixed.
    """
    cov_term = _cov_term(scenario, include_cov_term)
    off, d2 = _offsets(hovers, target, scenario)
    w = _weights(d2, scenario, cov_term)
    fim = np.array(
        [[np.sum(w * off[:, 0] ** 2), np.sum(w * off[:, 0] * off[:, 1])],
         [np.sum(w * off[:, 0] * off[:, 1]), np.sum(w * off[:, 1] ** 2)]]
    )
    if prior_fim is not None:
        fim = fim + prior_fim
    res = _result_from_fim(fim)
    ta, tb, tc = res.theta_a, res.theta_b, res.theta_c
    det = ta * tb - tc * tc
    # d(crb)/d(theta_a, theta_b, theta_c)
    ga = -(tb * tb + tc * tc) / det**2
    gb = -(ta * ta + tc * tc) / det**2
    gc = 2.0 * tc * (ta + tb) / det**2
    # dw/d(d2): w = G d2^-3 (+ 8 d2^-2)
    dw = -3.0 * scenario.sys.radar_info_gain / d2**4
    if cov_term:
        dw = dw - 16.0 / d2**3
    dx, dy = off[:, 0], off[:, 1]
    # each term is w*q(dx,dy); d/d dx = w*dq/ddx + q*dw*2dx
    da_dx = 2 * dx * w + dx * dx * dw * 2 * dx
    da_dy = dx * dx * dw * 2 * dy
    db_dx = dy * dy * dw * 2 * dx
    db_dy = 2 * dy * w + dy * dy * dw * 2 * dy
    dc_dx = dy * w + dx * dy * dw * 2 * dx
    dc_dy = dx * w + dx * dy * dw * 2 * dy
    grad = np.column_stack([ga * da_dx + gb * db_dx + gc * dc_dx, ga * da_dy + gb * db_dy + gc * dc_dy])
    return res.crb_sum, grad
