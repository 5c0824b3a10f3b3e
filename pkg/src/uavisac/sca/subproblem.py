"""Per-stage trajectory problem and its convexified subproblem around an iterate.

Stage iterates carry x = [s_x (N), s_y (N), delta (N), xi (N)]. Velocities are the
affine image of the waypoints, v = (D s - e_1 start) / Tf, so they are not
separate variables. Hovering points alias waypoints s(mu*j).

Constraints of the subproblem, all written as f(x) <= 0:

    speed   ||v_i||^2 <= Vmax^2
    box     0 <= s <= L
    delta   0 < delta_i <= 1.01,  xi_i >= 0
    energy  Tf*sum(P0(1+3|v|^2/U^2) + c3|v|^3 + PI*delta) + Th*K*(P0+PI) <= E
    lin-v   1/delta_i^2 - xi_i <= (|v0_i|^2 + 2 v0_i.(v_i - v0_i)) / vind^2
    lin-d   xi_i <= delta0_i^2 + 2 delta0_i (delta_i - delta0_i)

The solver works on (s, delta) only; :class:`Subproblem` explains why xi can go.

The objective is eta/crb_scale * (first-order CRB model in the hovers) minus
(1-eta)/rate_scale * (pooled mean of rate tangents). The rate of a waypoint is
convex and decreasing in z = H^2 + |s - user|^2, so its tangent in z is a global
lower bound; substituting z by its (convex) lower bound keeps the subproblem
convex and the tangent tight at its optimum.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ..channel import comm_rates
from ..crb import crb_gradient, crb_sum_multistage, fim_closed_form
from ..energy import hover_power, induced_slack, trajectory_energy
from ..errors import InfeasibleError, SingularFIMError
from ..scenario import Scenario
from ..trajectory import Trajectory, cadence_hover_indices, segment_velocities
from . import interior

LN2 = math.log(2.0)


@dataclass(frozen=True)
class StageProblem:
    scenario: Scenario
    n_wp: int
    start: tuple[float, float]
    target_estimate: tuple[float, float]
    e_budget: float
    eta: float
    stage_index: int = 1
    prior_hovers: tuple = ()
    prior_waypoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    crb_scale: float | None = None
    rate_scale: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.n_wp < 1:
            raise ValueError("a stage needs at least one waypoint")
        if self.e_budget <= 0:
            raise InfeasibleError("stage energy budget must be positive")
        object.__setattr__(self, "prior_waypoints", np.asarray(self.prior_waypoints, dtype=float).reshape(-1, 2))
        object.__setattr__(
            self, "prior_hovers", tuple(np.asarray(h, dtype=float).reshape(-1, 2) for h in self.prior_hovers)
        )

    @property
    def k_hover(self) -> int:
        return self.n_wp // self.scenario.sys.mu

    @property
    def hover_indices(self) -> np.ndarray:
        return cadence_hover_indices(self.n_wp, self.scenario.sys.mu)

    @property
    def prior_waypoint_count(self) -> int:
        return len(self.prior_waypoints)

    @property
    def pooled_count(self) -> int:
        return self.prior_waypoint_count + self.n_wp

    @property
    def prior_rate_sum(self) -> float:
        if not len(self.prior_waypoints):
            return 0.0
        return math.fsum(comm_rates(self.prior_waypoints, self.scenario))

    @property
    def prior_fim(self) -> np.ndarray:
        fim = np.zeros((2, 2))
        for h in self.prior_hovers:
            if len(h):
                fim = fim + fim_closed_form(h, self.target_estimate, self.scenario)
        return fim

    @property
    def crb_weight(self) -> float:
        if self.eta == 0.0 or self.crb_scale is None or not math.isfinite(self.crb_scale):
            return 0.0
        return self.eta / self.crb_scale

    @property
    def rate_weight(self) -> float:
        if self.eta == 1.0 or self.rate_scale is None:
            return 0.0
        return (1.0 - self.eta) / self.rate_scale

    def hover_only_cost(self) -> float:
        sys = self.scenario.sys
        return self.k_hover * sys.t_hover * hover_power(self.scenario.energy)


@dataclass
class StageIterate:
    waypoints: np.ndarray
    velocities: np.ndarray
    delta: np.ndarray
    xi: np.ndarray
    objective: float = math.nan
    crb: float = math.nan
    rate: float = math.nan
    feasible: bool = True
    step: float | None = None
    status: str = ""
    model_objective: float = math.nan
    newton_steps: int = 0

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.waypoints[:, 0], self.waypoints[:, 1], self.delta, self.xi])


# ------------------------------------------------------------ true objective


def true_metrics(prob: StageProblem, waypoints: np.ndarray) -> tuple[float, float, float]:
    """(objective, CRB at the estimate over all stages, pooled average rate)."""
    sc = prob.scenario
    rates = comm_rates(waypoints, sc)
    rate = (prob.prior_rate_sum + math.fsum(rates)) / prob.pooled_count
    hovers = waypoints[prob.hover_indices]
    try:
        crb = crb_sum_multistage([*prob.prior_hovers, hovers], prob.target_estimate, sc).crb_sum
    except (SingularFIMError, ValueError):
        crb = math.inf
    obj = 0.0
    if prob.crb_weight:
        obj += prob.crb_weight * crb
    if prob.rate_weight:
        obj -= prob.rate_weight * rate
    return obj, crb, rate


def make_iterate(prob: StageProblem, waypoints, delta, xi, **extra) -> StageIterate:
    s = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    v = segment_velocities(prob.start, s, prob.scenario.sys.t_fly)
    obj, crb, rate = true_metrics(prob, s)
    it = StageIterate(s, v, np.asarray(delta, dtype=float), np.asarray(xi, dtype=float), obj, crb, rate, **extra)
    it.feasible = original_feasible(prob, it)
    return it


def iterate_from_vector(prob: StageProblem, x: np.ndarray, **extra) -> StageIterate:
    n = prob.n_wp
    s = np.column_stack([x[:n], x[n : 2 * n]])
    return make_iterate(prob, s, x[2 * n : 3 * n].copy(), x[3 * n :].copy(), **extra)


def slack_energy(prob: StageProblem, velocities: np.ndarray, delta: np.ndarray) -> float:
    """Energy with the induced term written through delta (equals P(V) energy at equality)."""
    sys, ep = prob.scenario.sys, prob.scenario.energy
    sp2 = np.sum(velocities**2, axis=1)
    sp = np.sqrt(sp2)
    c3 = 0.5 * ep.d0 * ep.rho * ep.s * ep.area_a
    per = ep.p0 * (1 + 3 * sp2 / ep.u_tip**2) + c3 * sp**3 + ep.pi * delta
    return sys.t_fly * math.fsum(per) + prob.hover_only_cost()


def original_feasible(prob: StageProblem, it: StageIterate, rtol: float = 1e-9) -> bool:
    """Speed, area and true propulsion-energy constraints of the stage problem."""
    sys = prob.scenario.sys
    speeds = np.hypot(it.velocities[:, 0], it.velocities[:, 1])
    if np.any(speeds > sys.vmax * (1 + rtol)):
        return False
    s = it.waypoints
    tol = rtol * max(sys.lx, sys.ly)
    if np.any(s < -tol) or np.any(s[:, 0] > sys.lx + tol) or np.any(s[:, 1] > sys.ly + tol):
        return False
    traj = Trajectory(prob.start, s, it.velocities, prob.hover_indices, sys.t_fly)
    return trajectory_energy(traj, prob.scenario).total <= prob.e_budget * (1 + rtol)


def tighten(prob: StageProblem, it: StageIterate) -> StageIterate:
    """Set delta to its equality value at the current speeds and xi = delta^2."""
    speeds = np.hypot(it.velocities[:, 0], it.velocities[:, 1])
    delta = induced_slack(speeds, prob.scenario.energy)
    return dataclasses.replace(it, delta=delta, xi=delta**2)


# ---------------------------------------------------------------- subproblem

# Tie-break on delta. With slack in the energy budget, delta is free on a face
# of optima and interior-point iterates drift across it slowly.
DELTA_PRICE = 1e-4
# delta never exceeds 1 on the true problem (it equals 1 when hovering); the
# slightly looser cap keeps hovering expansion points strictly interior
DELTA_CAP = 1.01
_BLOCK = 4


class Subproblem:
    """Convex program around an expansion iterate, in solver variables.

    Two changes of variables keep the interior-point iterations short without
    changing the feasible set in (s, delta):

    * xi only appears in lin-v (where larger is looser) and lin-d (an upper
      bound), so it sits at that bound at every optimum. It is substituted,
      and xi >= 0 becomes delta >= delta0/2.
    * the parasite term |v|^3 in the energy budget moves into an epigraph
      variable p >= |v|^3, written as |v|^2 <= p^(2/3). The cubic inside one
      coupling constraint otherwise makes Newton steps overshoot it.

    Solver vector x = [s_x, s_y, delta, p] (N each); :meth:`reduce` and
    :meth:`expand` convert from and to stage iterate vectors.
    """

    def __init__(self, prob: StageProblem, around: StageIterate):
        sc = prob.scenario
        sys, ep = sc.sys, sc.energy
        n = prob.n_wp
        self.prob = prob
        self.around = around
        self.n_wp = n
        self.n = _BLOCK * n
        self.tf = sys.t_fly
        self.start = np.asarray(prob.start, dtype=float)
        self.vmax2 = sys.vmax**2
        self.lx, self.ly = sys.lx, sys.ly
        self.vind2 = ep.v0**2
        self.c2 = 3.0 * ep.p0 / ep.u_tip**2
        self.c3 = 0.5 * ep.d0 * ep.rho * ep.s * ep.area_a
        self.p_ind = ep.pi
        self.e_budget = prob.e_budget
        self.e_const = sys.t_fly * n * ep.p0 + prob.hover_only_cost()
        if self.e_const >= self.e_budget:
            raise InfeasibleError(
                f"stage budget {self.e_budget:.1f} J does not cover the hover-only cost {self.e_const:.1f} J"
            )
        # decision-vector index of each interleaved (sx_i, sy_i, delta_i, p_i) slot
        self.perm = (np.arange(_BLOCK)[None, :] * n + np.arange(n)[:, None]).ravel()

        self.v0 = np.asarray(around.velocities, dtype=float)
        self.v0_sq = np.sum(self.v0**2, axis=1)
        self.delta0 = np.asarray(around.delta, dtype=float)
        if np.any(self.delta0 <= 0):
            raise ValueError("expansion point needs delta > 0")
        # per-family scales; they leave the central path unchanged and only
        # balance the phase-I infeasibility measure
        self.sc_speed = 1.0 / self.vmax2
        self.sc_cube = 1.0 / self.vmax2
        self.sc_p = 1.0 / sys.vmax**3
        self.sc_box = 1.0 / max(self.lx, self.ly)
        self.sc_energy = 1.0 / self.e_budget
        self.sc_lin = self.delta0**2

        # objective: sensing tangent (linear in hovers)
        self.hover_idx = prob.hover_indices
        self.crb_coef = np.zeros((n, 2))
        self.crb0 = 0.0
        w_c = prob.crb_weight
        if w_c and len(self.hover_idx):
            hovers0 = around.waypoints[self.hover_idx]
            crb0, grad = crb_gradient(hovers0, prob.target_estimate, sc, prior_fim=prob.prior_fim)
            self.crb0 = crb0
            self.crb_coef[self.hover_idx] = w_c * grad
        self.obj_const = w_c * self.crb0 - float(np.sum(self.crb_coef * around.waypoints))
        # objective: rate tangent in z, with z >= H^2 + |s-u|^2 substituted
        self.user = np.asarray(sc.user, dtype=float)
        self.q = np.zeros(n)
        w_r = prob.rate_weight
        if w_r:
            gamma = sys.comm_snr_ref
            z0 = sys.altitude**2 + np.sum((around.waypoints - self.user) ** 2, axis=1)
            r0 = sys.bandwidth * np.log2(1 + gamma / z0)
            dr = -sys.bandwidth / LN2 * gamma / (z0 * (z0 + gamma))
            pooled = prob.pooled_count
            self.q = -w_r / pooled * dr  # > 0
            self.obj_const -= w_r / pooled * (prob.prior_rate_sum + math.fsum(r0 - dr * z0))
            self.obj_const += float(np.sum(self.q * sys.altitude**2))
        self.delta_price = DELTA_PRICE / n
        self.m = 10 * n + 1
        # constant parts of the local constraint gradients
        self._lin_v_grad = np.zeros((n, _BLOCK))
        self._lin_v_grad[:, :2] = -2 * self.sc_lin[:, None] * self.v0 / self.vind2
        ce = self.sc_energy * self.tf
        self._energy_grad = np.zeros((n, _BLOCK))
        self._energy_grad[:, 2] = ce * self.p_ind
        self._energy_grad[:, 3] = ce * self.c3
        self._e_v = 2 * ce * self.c2

    # -- helpers
    def split(self, x):
        n = self.n_wp
        return x[:n], x[n : 2 * n], x[2 * n : 3 * n], x[3 * n :]

    def velocities(self, sx, sy):
        vx = np.empty_like(sx)
        vy = np.empty_like(sy)
        vx[0] = sx[0] - self.start[0]
        vy[0] = sy[0] - self.start[1]
        np.subtract(sx[1:], sx[:-1], out=vx[1:])
        np.subtract(sy[1:], sy[:-1], out=vy[1:])
        return vx / self.tf, vy / self.tf

    def xi_of(self, delta):
        """The eliminated slack: xi at its lin-d bound."""
        return self.delta0**2 + 2 * self.delta0 * (delta - self.delta0)

    def _lin_speed(self, vx, vy):
        """Tangent of |v|^2 / v_ind^2 at the expansion velocities."""
        v0 = self.v0
        return (self.v0_sq + 2 * (v0[:, 0] * (vx - v0[:, 0]) + v0[:, 1] * (vy - v0[:, 1]))) / self.vind2

    def reduce(self, x_full, eps: float = 1e-3):
        """Stage iterate vector (s, delta, xi) to solver variables, p slightly above |v|^3."""
        n = self.n_wp
        x_full = np.asarray(x_full, dtype=float)
        vx, vy = self.velocities(x_full[:n], x_full[n : 2 * n])
        p = ((vx * vx + vy * vy) * (1 + eps) + eps) ** 1.5
        return np.concatenate([x_full[: 3 * n], p])

    def expand(self, x):
        """Solver vector back to (s, delta, xi); xi is clipped at 0 against round-off."""
        n = self.n_wp
        d = x[2 * n : 3 * n]
        return np.concatenate([x[: 3 * n], np.maximum(self.xi_of(d), 0.0)])

    def _to_global(self, loc: np.ndarray) -> np.ndarray:
        """Pull a per-segment (vx, vy, delta, p) vector back to the decision vector."""
        n, tf = self.n_wp, self.tf
        out = np.empty(self.n)
        for c in (0, 1):
            col = loc[:, c] / tf
            out[c * n : (c + 1) * n] = col
            out[c * n : (c + 1) * n - 1] -= col[1:]
        out[2 * n : 3 * n] = loc[:, 2]
        out[3 * n :] = loc[:, 3]
        return out

    # -- objective
    def objective(self, x) -> float:
        sx, sy, d, _ = self.split(x)
        val = self.obj_const + float(self.crb_coef[:, 0] @ sx + self.crb_coef[:, 1] @ sy)
        val += self.delta_price * float(np.sum(d))
        if self.q.any():
            val += float(self.q @ ((sx - self.user[0]) ** 2 + (sy - self.user[1]) ** 2))
        return val

    def objective_grad(self, x) -> np.ndarray:
        n = self.n_wp
        sx, sy, _, _ = self.split(x)
        g = np.zeros(self.n)
        g[:n] = self.crb_coef[:, 0] + 2 * self.q * (sx - self.user[0])
        g[n : 2 * n] = self.crb_coef[:, 1] + 2 * self.q * (sy - self.user[1])
        g[2 * n : 3 * n] = self.delta_price
        return g

    # -- constraints
    def constraint_families(self, x) -> dict[str, np.ndarray]:
        """Unscaled constraint values f <= 0, keyed by family."""
        sx, sy, d, p = self.split(x)
        vx, vy = self.velocities(sx, sy)
        sp2 = vx * vx + vy * vy
        energy = self.tf * float(np.sum(self.c2 * sp2 + self.c3 * p + self.p_ind * d)) + self.e_const - self.e_budget
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d2 = np.where(d > 0, 1.0 / (d * d), np.nan)
            p23 = np.where(p > 0, np.cbrt(p) ** 2, np.nan)
        return {
            "speed": sp2 - self.vmax2,
            "box": np.concatenate([-sx, -sy, sx - self.lx, sy - self.ly]),
            "delta_range": np.concatenate([0.5 * self.delta0 - d, d - DELTA_CAP]),
            "cube": sp2 - p23,
            "p_pos": -p,
            "energy": np.array([energy]),
            "lin_v": inv_d2 - self.xi_of(d) - self._lin_speed(vx, vy),
        }

    def constraints(self, x) -> np.ndarray:
        f = self.constraint_families(x)
        return np.concatenate(
            [
                f["speed"] * self.sc_speed,
                f["box"] * self.sc_box,
                f["delta_range"],
                f["cube"] * self.sc_cube,
                f["p_pos"] * self.sc_p,
                f["energy"] * self.sc_energy,
                f["lin_v"] * self.sc_lin,
            ]
        )

    def interior_guess(self, x, eps: float = 1e-3):
        """Inflate delta at a tight expansion point, which makes lin-v strict."""
        y = np.array(x, dtype=float)
        y[2 * self.n_wp : 3 * self.n_wp] *= 1.0 + eps
        return y

    def max_violation(self, x) -> float:
        """Largest scaled constraint value (<= 0 means feasible)."""
        return float(np.max(self.constraints(x)))

    # -- derivatives. Constraint order: speed, box (4 blocks), delta range (2
    # blocks), cube, p > 0, energy, lin-v; per-segment families have a local
    # gradient in (vx, vy, delta, p).
    def _split_weights(self, w):
        n = self.n_wp
        o = np.cumsum([0, n, 4 * n, 2 * n, n, n, 1, n])
        return [w[o[k] : o[k + 1]] for k in range(7)]

    def _local_grads(self, x):
        n = self.n_wp
        sx, sy, d, p = self.split(x)
        vx, vy = self.velocities(sx, sy)
        speed = np.zeros((n, _BLOCK))
        speed[:, 0] = 2 * self.sc_speed * vx
        speed[:, 1] = 2 * self.sc_speed * vy
        cube = speed * (self.sc_cube / self.sc_speed)
        cube[:, 3] = -self.sc_cube * (2.0 / 3.0) / np.cbrt(p)
        lin_v = self._lin_v_grad.copy()
        lin_v[:, 2] = -self.sc_lin * (2 / d**3 + 2 * self.delta0)
        energy = self._energy_grad.copy()
        energy[:, 0] = self._e_v * vx
        energy[:, 1] = self._e_v * vy
        return (speed, cube, lin_v, energy), (vx, vy, d, p)

    def constraint_grad_sum(self, x, w) -> np.ndarray:
        w_sp, w_box, w_dr, w_cu, w_pp, w_e, w_lv = self._split_weights(w)
        (speed, cube, lin_v, energy), _ = self._local_grads(x)
        n = self.n_wp
        loc = speed * w_sp[:, None] + cube * w_cu[:, None] + lin_v * w_lv[:, None] + energy * w_e[0]
        loc[:, 2] += w_dr[n:] - w_dr[:n]
        loc[:, 3] -= self.sc_p * w_pp
        out = self._to_global(loc)
        out[: 2 * n] += self.sc_box * (w_box[2 * n :] - w_box[: 2 * n])
        return out

    def constraint_jvp(self, x, dx) -> np.ndarray:
        dsx, dsy, dd, dp = self.split(dx)
        dv = np.empty((self.n_wp, _BLOCK))
        dv[:, 0] = dsx
        dv[:, 1] = dsy
        dv[1:, :2] -= dv[:-1, :2].copy()
        dv[:, :2] /= self.tf
        dv[:, 2] = dd
        dv[:, 3] = dp
        (speed, cube, lin_v, energy), _ = self._local_grads(x)
        return np.concatenate(
            [
                np.sum(speed * dv, axis=1),
                self.sc_box * np.concatenate([-dsx, -dsy, dsx, dsy]),
                -dd,
                dd,
                np.sum(cube * dv, axis=1),
                -self.sc_p * dp,
                [float(np.sum(energy * dv))],
                np.sum(lin_v * dv, axis=1),
            ]
        )

    def local_hessian(self, x, w_outer, w_curv) -> np.ndarray:
        """(n, 4, 4) per-segment blocks of the weighted Hessian, energy outer product excluded."""
        w_sp, _, w_dr, w_cu, w_pp, _, w_lv = self._split_weights(w_outer)
        c_sp, _, _, c_cu, _, c_e, c_lv = self._split_weights(w_curv)
        (speed, cube, lin_v, _), (vx, vy, d, p) = self._local_grads(x)
        n = self.n_wp
        hl = np.einsum("i,ia,ib->iab", w_sp, speed, speed)
        hl += np.einsum("i,ia,ib->iab", w_cu, cube, cube)
        hl += np.einsum("i,ia,ib->iab", w_lv, lin_v, lin_v)
        hl[:, 2, 2] += w_dr[:n] + w_dr[n:]
        hl[:, 3, 3] += self.sc_p**2 * w_pp
        # curvature: |v|^2 in speed, cube and energy; p^(2/3) in cube; 1/delta^2 in lin-v
        vv = 2 * (self.sc_speed * c_sp + self.sc_cube * c_cu + c_e[0] * self.sc_energy * self.tf * self.c2)
        hl[:, 0, 0] += vv
        hl[:, 1, 1] += vv
        hl[:, 3, 3] += c_cu * self.sc_cube * (2.0 / 9.0) / (np.cbrt(p) * p)
        hl[:, 2, 2] += c_lv * self.sc_lin * 6.0 / d**4
        return hl

    def kkt_factor(self, x, w_outer, w_curv, obj_weight: float = 1.0):
        n = self.n_wp
        hl = self.local_hessian(x, w_outer, w_curv)
        _, w_box, _, _, _, w_e, _ = self._split_weights(w_outer)
        diag_s = self.sc_box**2 * (w_box[: 2 * n] + w_box[2 * n :]) + obj_weight * np.concatenate([2 * self.q, 2 * self.q])
        band = _assemble_band(hl, diag_s, self.tf)
        (_, _, _, energy), _ = self._local_grads(x)
        ge = self._to_global(energy)
        return _BandedRankOne(band, ge[self.perm], w_e[0], self.perm)

    def kkt_dense(self, x, w_outer, w_curv, obj_weight: float = 1.0) -> np.ndarray:
        """Dense version of :meth:`kkt_factor`'s matrix, in decision-vector order."""
        return self.kkt_factor(x, w_outer, w_curv, obj_weight).dense()


# interleaved order (sx_i, sy_i, delta_i, p_i) makes the KKT matrix banded:
# segment i couples waypoints i-1 and i with its own delta and p
_BW = 2 * _BLOCK - 1


def _band_scatter(n: int, tf: float):
    """Index map from per-segment Hessian blocks (n, B, B) into upper banded storage.

    Returns (target, source, coef): band.flat[target] += coef * hl.flat[source].
    Waypoint coordinates enter segment i as +s_i/tf and segment i+1 as -s_i/tf.
    """
    nb = _BLOCK
    size = nb * n
    tgt, src, coef = [], [], []
    i = np.arange(n)

    def put(r, c, block, a, b, k):
        keep = r <= c
        tgt.append((_BW + r[keep] - c[keep]) * size + c[keep])
        src.append((block[keep] * nb + a) * nb + b)
        coef.append(np.full(int(keep.sum()), k))

    for a in range(nb):
        for b in range(nb):
            # each local coordinate maps to (global slot, factor) pairs
            rows = [(nb * i + a, i, 1.0 / tf if a < 2 else 1.0)]
            if a < 2:
                rows.append((nb * (i[1:] - 1) + a, i[1:], -1.0 / tf))
            cols = [(nb * i + b, i, 1.0 / tf if b < 2 else 1.0)]
            if b < 2:
                cols.append((nb * (i[1:] - 1) + b, i[1:], -1.0 / tf))
            for r, blk_r, kr in rows:
                for c, blk_c, kc in cols:
                    # pair only slots that come from the same segment
                    common, ir, ic = np.intersect1d(blk_r, blk_c, return_indices=True)
                    put(r[ir], c[ic], common, a, b, kr * kc)
    return np.concatenate(tgt), np.concatenate(src), np.concatenate(coef)


_SCATTER_CACHE: dict = {}


def _assemble_band(hl: np.ndarray, diag_s: np.ndarray, tf: float) -> np.ndarray:
    n = hl.shape[0]
    key = (n, tf)
    if key not in _SCATTER_CACHE:
        _SCATTER_CACHE[key] = _band_scatter(n, tf)
    tgt, src, coef = _SCATTER_CACHE[key]
    size = _BLOCK * n
    ab = np.bincount(tgt, weights=hl.ravel()[src] * coef, minlength=(_BW + 1) * size).reshape(_BW + 1, size)
    ab[_BW, 0 : size : _BLOCK] += diag_s[:n]
    ab[_BW, 1 : size : _BLOCK] += diag_s[n:]
    return ab


class _BandedRankOne:
    """Solver for band + w * g g^T (Sherman-Morrison on a banded Cholesky factor)."""

    def __init__(self, band, g_perm, w, perm):
        self.band, self.g, self.w, self.perm = band, g_perm, w, perm
        self.chol = None
        try:
            self.chol = scipy.linalg.cholesky_banded(band, lower=False, check_finite=False)
        except np.linalg.LinAlgError:
            pass
        if self.chol is not None:
            self.bg = scipy.linalg.cho_solve_banded((self.chol, False), self.g, check_finite=False)
            self.denom = 1.0 + self.w * float(self.g @ self.bg)

    def dense(self) -> np.ndarray:
        size = self.band.shape[1]
        m = np.zeros((size, size))
        for k in range(_BW + 1):
            off = _BW - k
            vals = self.band[k, off:]
            idx = np.arange(size - off)
            m[idx, idx + off] = vals
            m[idx + off, idx] = vals
        m += self.w * np.outer(self.g, self.g)
        out = np.empty_like(m)
        out[np.ix_(self.perm, self.perm)] = m
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        r = rhs[self.perm]
        if self.chol is None:
            y = np.linalg.lstsq(self.dense()[np.ix_(self.perm, self.perm)], r, rcond=None)[0]
        else:
            y = scipy.linalg.cho_solve_banded((self.chol, False), r, check_finite=False)
            y = y - self.bg * (self.w * float(self.g @ y) / self.denom)
        out = np.empty_like(y)
        out[self.perm] = y
        return out


def build_subproblem(prob: StageProblem, iterate: StageIterate) -> Subproblem:
    return Subproblem(prob, iterate)


def solve_subproblem(sub: Subproblem, gap_tol: float = 1e-6, max_newton: int = 400) -> StageIterate:
    """Optimum of the convex subproblem as a stage iterate (``status`` records the solver outcome)."""
    res = interior.solve(sub, sub.reduce(sub.around.as_vector()), gap_tol=gap_tol, max_newton=max_newton)
    return iterate_from_vector(
        sub.prob, sub.expand(res.x), status=res.status, model_objective=sub.objective(res.x), newton_steps=res.iterations
    )
