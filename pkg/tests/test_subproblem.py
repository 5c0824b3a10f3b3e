import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import cvx_subproblem
from uavisac.energy import straight_cost
from uavisac.errors import InfeasibleError
from uavisac.sca.stage import initial_iterate, with_scales
from uavisac.sca.subproblem import (
    StageProblem,
    build_subproblem,
    make_iterate,
    original_feasible,
    solve_subproblem,
    tighten,
    true_metrics,
)


def _problem(sc, n=10, extra=1.3, eta=0.5, **kw):
    prob = StageProblem(sc, n, sc.base, tuple(sc.first_estimate), extra * straight_cost(n, sc), eta, **kw)
    init = initial_iterate(prob)
    return with_scales(prob, init), init


def _reference_value(sub):
    # CLARABEL sometimes stops early on the cubic cone, so take the better of two solvers
    values = []
    for solver in ("CLARABEL", "CVXOPT"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            values.append(cvx_subproblem(sub, solver)[3])
    return min(values)


def _interior_point(sub):
    x = sub.interior_guess(sub.reduce(sub.around.as_vector()))
    assert np.all(sub.constraints(x) < 0)
    return x


CASES = [(0.0, 10, 1.3), (0.5, 10, 1.3), (1.0, 10, 1.3), (0.0, 25, 1.1), (0.5, 25, 1.1), (1.0, 25, 1.1), (0.5, 25, 2.0)]


@pytest.mark.parametrize("eta, n, extra", CASES)
def test_matches_cvxpy_oracle(scenario, eta, n, extra):
    prob, init = _problem(scenario, n, extra, eta)
    sub = build_subproblem(prob, init)
    opt = solve_subproblem(sub)
    assert opt.status == "optimal"
    ref = _reference_value(sub)
    assert opt.model_objective == pytest.approx(ref, rel=1e-5, abs=1e-6)
    # the returned point is feasible in the original slack variables
    s, d, xi = opt.waypoints, opt.delta, opt.xi
    v = np.diff(np.vstack([sub.start, s]), axis=0) / sub.tf
    lin = (sub.v0_sq + 2 * np.sum(sub.v0 * (v - sub.v0), axis=1)) / sub.vind2
    assert np.all(d**-2 - xi <= lin + 1e-9)
    assert np.all(xi <= sub.delta0**2 + 2 * sub.delta0 * (d - sub.delta0) + 1e-12)
    energy = sub.tf * np.sum(sub.c2 * np.sum(v**2, 1) + sub.c3 * np.linalg.norm(v, axis=1) ** 3 + sub.p_ind * d)
    assert energy + sub.e_const <= sub.e_budget * (1 + 1e-9)


def test_later_stage_matches_oracle(scenario):
    rng = np.random.default_rng(2)
    prior = rng.uniform(300, 1200, size=(5, 2))
    prob, init = _problem(scenario, 15, 1.4, 0.5, stage_index=2, prior_hovers=(prior,), prior_waypoints=np.repeat(prior, 5, axis=0))
    sub = build_subproblem(prob, init)
    opt = solve_subproblem(sub)
    assert opt.model_objective == pytest.approx(_reference_value(sub), rel=1e-5, abs=1e-6)


def test_subproblem_optimum_is_feasible_for_stage(scenario):
    # the convex restriction only removes points, so tightening its optimum stays feasible
    for eta in (0.0, 0.5, 1.0):
        prob, init = _problem(scenario, 20, 1.2, eta)
        opt = solve_subproblem(build_subproblem(prob, init))
        assert original_feasible(prob, tighten(prob, opt))


def test_model_exact_at_expansion_point(scenario):
    for eta in (0.0, 0.3, 1.0):
        prob, init = _problem(scenario, 12, 1.5, eta)
        sub = build_subproblem(prob, init)
        x0 = sub.reduce(init.as_vector())
        model = sub.objective(x0) - sub.delta_price * float(np.sum(init.delta))
        assert model == pytest.approx(true_metrics(prob, init.waypoints)[0], rel=1e-10, abs=1e-12)


@given(st.lists(st.tuples(st.floats(0, 1500), st.floats(0, 1500)), min_size=12, max_size=12))
def test_rate_model_upper_bounds_true_objective(scenario, pts):
    # with eta = 0 the model is a tangent of a convex function of z, bounded below by it
    prob, init = _problem(scenario, 12, 1.5, 0.0)
    sub = build_subproblem(prob, init)
    pts = np.asarray(pts)
    it = make_iterate(prob, pts, init.delta, init.xi)
    x = sub.reduce(it.as_vector())
    model = sub.objective(x) - sub.delta_price * float(np.sum(init.delta))
    assert model >= true_metrics(prob, pts)[0] - 1e-12


def test_constraint_gradient_by_finite_differences(scenario):
    prob, init = _problem(scenario, 8, 1.5, 0.5)
    sub = build_subproblem(prob, init)
    x = _interior_point(sub)
    rng = np.random.default_rng(0)
    w = rng.uniform(0.1, 1.0, size=len(sub.constraints(x)))
    g = sub.constraint_grad_sum(x, w)
    fd = np.empty(sub.n)
    for i in range(sub.n):
        h = 1e-6 * max(1.0, abs(x[i]))
        e = np.zeros(sub.n)
        e[i] = h
        fd[i] = (w @ sub.constraints(x + e) - w @ sub.constraints(x - e)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7 * np.abs(fd).max())
    # Jacobian-vector product agrees with the gradient sum
    dx = rng.normal(size=sub.n)
    assert w @ sub.constraint_jvp(x, dx) == pytest.approx(g @ dx, rel=1e-10)


def test_objective_gradient_by_finite_differences(scenario):
    prob, init = _problem(scenario, 8, 1.5, 0.4)
    sub = build_subproblem(prob, init)
    x = _interior_point(sub)
    g = sub.objective_grad(x)
    for i in range(sub.n):
        h = 1e-4 * max(1.0, abs(x[i]))
        e = np.zeros(sub.n)
        e[i] = h
        assert g[i] == pytest.approx((sub.objective(x + e) - sub.objective(x - e)) / (2 * h), rel=1e-6, abs=1e-12)


def test_kkt_matrix_by_finite_differences(scenario):
    prob, init = _problem(scenario, 6, 1.5, 0.5)
    sub = build_subproblem(prob, init)
    x = _interior_point(sub)
    m = len(sub.constraints(x))
    rng = np.random.default_rng(4)
    w_outer, w_curv = rng.uniform(0.1, 2.0, m), rng.uniform(0.1, 2.0, m)
    jac = np.column_stack([sub.constraint_jvp(x, e) for e in np.eye(sub.n)])
    curv = np.empty((sub.n, sub.n))
    obj = np.empty((sub.n, sub.n))
    for i in range(sub.n):
        h = 1e-6 * max(1.0, abs(x[i]))
        e = np.zeros(sub.n)
        e[i] = h
        curv[:, i] = (sub.constraint_grad_sum(x + e, w_curv) - sub.constraint_grad_sum(x - e, w_curv)) / (2 * h)
        obj[:, i] = (sub.objective_grad(x + e) - sub.objective_grad(x - e)) / (2 * h)
    expected = 0.7 * obj + jac.T @ (w_outer[:, None] * jac) + curv
    dense = sub.kkt_dense(x, w_outer, w_curv, obj_weight=0.7)
    np.testing.assert_allclose(dense, expected, rtol=1e-5, atol=1e-6 * np.abs(expected).max())
    rhs = rng.normal(size=sub.n)
    sol = sub.kkt_factor(x, w_outer, w_curv, obj_weight=0.7).solve(rhs)
    np.testing.assert_allclose(dense @ sol, rhs, rtol=1e-7, atol=1e-8 * np.abs(rhs).max())


def test_budget_below_hover_cost_is_infeasible(scenario):
    prob, init = _problem(scenario, 10, 1.3, 0.5)
    tiny = StageProblem(scenario, 10, scenario.base, tuple(scenario.first_estimate), 100.0, 0.5)
    with pytest.raises(InfeasibleError):
        build_subproblem(tiny, init)
    with pytest.raises(InfeasibleError):
        StageProblem(scenario, 10, scenario.base, (0, 0), 0.0, 0.5)


def test_problem_validation(scenario):
    with pytest.raises(ValueError):
        StageProblem(scenario, 10, scenario.base, (0, 0), 1e4, 1.5)
    with pytest.raises(ValueError):
        StageProblem(scenario, 0, scenario.base, (0, 0), 1e4, 0.5)
