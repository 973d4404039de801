import math

import numpy as np
import pytest
from scipy.optimize import brentq

from adlm.blocks import Cosine1D, Huber, NegativeSquare1D, Polynomial1D, Quadratic, Zero
from adlm.errors import UsageError
from adlm.instances import indefinite_box_problem, nonconvex_sets_example
from adlm.problem import StructuredProblem
from adlm.sets import Ball, Box, IntervalUnion, WholeSpace
from adlm.subsolvers import (SolverPolicy, SubproblemSpec, scalar_strongly_convex_solve,
                             solve_block, x_subproblem, z_subproblem)


def test_zero_objective_matches_least_squares_formula():
    rng = np.random.default_rng(2)
    B = rng.normal(size=(5, 3))
    A = rng.normal(size=(5, 2))
    x, y, c, rho = rng.normal(size=2), rng.normal(size=5), rng.normal(size=5), 1.7
    p = StructuredProblem(Quadratic(np.eye(2)), Zero(3), A, B, c)
    res = solve_block(z_subproblem(p, x, y, rho, np.zeros(3)))
    expect = np.linalg.solve(B.T @ B, B.T @ (c - A @ x - y / rho))
    np.testing.assert_allclose(res.x, expect, atol=1e-10)
    assert res.status == "global" and res.strategy == "closed-form"


def test_interval_union_x_update():
    spec = x_subproblem(nonconvex_sets_example(), np.zeros(1), np.zeros(1), 1.0, np.zeros(1))
    res = solve_block(spec, SolverPolicy("scalar-exact"))
    assert res.x[0] == pytest.approx(-1 / 30, abs=1e-10)
    # independent oracle: dense grid over both pieces
    grid = np.concatenate([np.linspace(-1, 0, 200001), np.linspace(1, 2, 200001)])
    best = grid[np.argmin(spec.value_batch(grid))]
    assert abs(res.x[0] - best) <= 1e-5


def test_projection_of_unconstrained_minimum():
    spec = SubproblemSpec(Quadratic([[1.0]]), [0.0], [[0.0]], Box([1.0], [2.0]), [1.5])
    for strat in ("auto", "projected-gradient", "scalar-exact", "grid-global"):
        assert solve_block(spec, SolverPolicy(strat)).x[0] == pytest.approx(1.0, abs=1e-7)


def test_strongly_convex_linear_case():
    zero = lambda t: 0.0
    assert scalar_strongly_convex_solve(zero, 0.6, 2.0, 1.0, 0.0) == pytest.approx(1.0 - 0.3)


def test_strongly_convex_cosine_against_bisection():
    root = scalar_strongly_convex_solve(lambda t: -math.sin(t), 1.0, 2.0, 0.0, 0.0, lipschitz=1.0)
    oracle = brentq(lambda t: -math.sin(t) + 1.0 + 2.0 * t, -2.0, 0.0, xtol=1e-15)
    assert root == pytest.approx(oracle, abs=1e-12)
    assert root == pytest.approx(-0.887862, abs=1e-6)


def test_strongly_convex_root_at_anchor():
    fp = lambda t: math.sin(t)
    a = 0.4
    assert scalar_strongly_convex_solve(fp, -math.sin(a), 3.0, a, 2.0, 1.0) == a


def test_strongly_convex_requires_rho_above_lipschitz():
    with pytest.raises(UsageError):
        scalar_strongly_convex_solve(lambda t: -2 * t, 0.0, 2.0, 0.0, 0.0, lipschitz=2.0)


def test_negative_square_with_large_penalty():
    # -x^2 + w x + (rho/2) x^2 has minimizer -w / (rho - 2)
    spec = SubproblemSpec(NegativeSquare1D(), [0.9], [[3.0]], WholeSpace(1), [0.0])
    assert solve_block(spec).x[0] == pytest.approx(-0.9, abs=1e-10)


def test_unbounded_quadratic_is_rejected():
    spec = SubproblemSpec(NegativeSquare1D(), [0.0], [[1.0]], WholeSpace(1), [0.0])
    with pytest.raises(UsageError):
        solve_block(spec, SolverPolicy("closed-form"))


def test_scalar_exact_finds_global_minimum_of_quartic():
    # double well (x^2 - 1)^2 + 0.3 x: global minimum on the negative side
    poly = Polynomial1D([1.0, 0.3, -2.0, 0.0, 1.0])
    spec = SubproblemSpec(poly, [0.0], [[0.0]], Box([-3.0], [3.0]), [1.0])
    res = solve_block(spec, SolverPolicy("scalar-exact"))
    grid = np.linspace(-3, 3, 600001)
    assert res.x[0] == pytest.approx(grid[np.argmin(poly.value_batch(grid))], abs=1e-5)
    assert res.x[0] < 0


def test_grid_global_two_dimensional():
    q = Quadratic(np.diag([1.0, -0.5]), [0.1, 0.0])
    spec = SubproblemSpec(q, [0.0, 0.2], np.eye(2) * 0.2, Box([-1, -1], [1, 1]), [0.0, 0.0])
    res = solve_block(spec, SolverPolicy("grid-global", multistart_count=3))
    g = np.linspace(-1, 1, 2001)
    X, Y = np.meshgrid(g, g)
    V = spec.value_batch(np.column_stack([X.ravel(), Y.ravel()]))
    assert spec.value(res.x) <= V.min() + 1e-9


def test_projected_gradient_on_ball_and_box():
    spec = SubproblemSpec(Huber(0.5, 2, [3.0, 0.0]), [0.0, 0.0], np.eye(2) * 0.1, Ball([0, 0], 1.0),
                          [0.0, 0.0])
    res = solve_block(spec, SolverPolicy("projected-gradient"))
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-6)
    p = indefinite_box_problem()
    spec = x_subproblem(p, np.zeros(2), np.zeros(2), 2.0, np.zeros(2))
    res = solve_block(spec, SolverPolicy("projected-gradient"))
    grid = solve_block(spec, SolverPolicy("grid-global", multistart_count=4))
    assert res.status == "local" and grid.status == "global"
    assert spec.value(res.x) <= spec.value(grid.x) + 1e-9
    np.testing.assert_allclose(res.x, grid.x, atol=1e-6)


def test_solution_never_worse_than_feasible_warm_start():
    spec = SubproblemSpec(Cosine1D(), [0.0], [[0.1]], IntervalUnion(((-1.0, 0.0), (2.0, 4.0))), [3.0])
    for strat in ("auto", "projected-gradient", "scalar-exact", "grid-global"):
        res = solve_block(spec, SolverPolicy(strat))
        assert spec.value(res.x) <= spec.value([3.0]) + 1e-12
        assert spec.set.contains(res.x, 1e-12)


def test_policy_validation():
    with pytest.raises(UsageError):
        SolverPolicy("simplex")
    with pytest.raises(UsageError):
        SolverPolicy(tol=0.0)
    with pytest.raises(UsageError):
        solve_block(SubproblemSpec(Quadratic(np.eye(2)), [0, 0], np.eye(2), WholeSpace(2), [0, 0]),
                    SolverPolicy("scalar-exact"))
