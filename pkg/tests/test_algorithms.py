import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adlm.algorithms import (DualPolicy, PenaltySchedule, StopRule, diagnose_trace,
                             prop1_bound_ratios, run_adpm, run_admm, run_method_of_multipliers,
                             run_quadratic_penalty)
from adlm.blocks import NegativeSquare1D, Zero
from adlm.errors import UsageError
from adlm.instances import (cos_sin, huber_consensus, indefinite_box_problem,
                            nonconvex_sets_example, quadratic_consensus, scalar_consensus)
from adlm.problem import StructuredProblem
from adlm.sets import Box
from adlm.subsolvers import SolverPolicy

EXACT = SolverPolicy("scalar-exact")
TIGHT = StopRule(max_iters=2000, primal_tol=1e-10, step_tol=1e-11, patience=20)


@given(st.floats(0.1, 10), st.floats(1.01, 4), st.integers(1, 6), st.integers(0, 200))
def test_geometric_schedule_property(rho0, delta, kappa, t):
    s = PenaltySchedule.geometric(rho0, delta, kappa)
    assert s(t + kappa) >= delta * s(t) * (1 - 1e-12)
    assert s(t + 1) >= s(t)


@given(st.floats(0.1, 10), st.floats(0.01, 5), st.integers(0, 1000))
def test_linear_schedule_diverges(rho0, slope, t):
    s = PenaltySchedule.linear(rho0, slope)
    assert s(t + 1) - s(t) == pytest.approx(slope)


def test_schedule_and_policy_validation():
    with pytest.raises(UsageError):
        PenaltySchedule.geometric(1.0, 1.0, 1)
    with pytest.raises(UsageError):
        PenaltySchedule("cubic", 1.0)
    with pytest.raises(UsageError):
        DualPolicy.bounded(0.0)
    with pytest.raises(UsageError):
        StopRule(max_iters=0)
    p = quadratic_consensus()
    with pytest.raises(UsageError):
        run_adpm(p, PenaltySchedule.constant(1.0), DualPolicy.zero(), ([0.0], [0.0]))
    with pytest.raises(UsageError):
        run_adpm(p, PenaltySchedule.linear(), DualPolicy.multiplier(), ([0.0], [0.0]))
    with pytest.raises(UsageError):
        run_admm(p, 1.0, ([0.0, 1.0], [0.0]))


def test_bounded_dual_policy_clips():
    d = DualPolicy.bounded(2.0)
    np.testing.assert_allclose(d.clip(np.array([3.0, 4.0])), [1.2, 1.6])
    np.testing.assert_array_equal(d.clip(np.array([1.0, 1.0])), [1.0, 1.0])


def test_admm_quadratic_consensus():
    tr = run_admm(quadratic_consensus(), 2.0, ([0.0], [0.0]), stop=TIGHT)
    assert tr.verdict == "converged"
    assert tr.final.x[0] == pytest.approx(1.5, abs=1e-8)
    assert tr.final.z[0] == pytest.approx(1.5, abs=1e-8)
    assert tr.final.y[0] == pytest.approx(-1.0, abs=1e-8)
    assert tr.fon is not None and tr.fon.passed


def test_admm_dual_update_identity():
    tr = run_admm(quadratic_consensus(), 2.0, ([0.0], [0.0]), stop=StopRule(max_iters=15))
    for prev, rec in zip(tr.records, tr.records[1:]):
        r = rec.x - rec.z
        np.testing.assert_allclose(rec.y, prev.y + 2.0 * r, atol=1e-14)


def test_z_update_never_increases_lagrangian():
    for p, init in ((cos_sin(), ([2.0], [math.cos(2.0)])),
                    (nonconvex_sets_example(), ([0.0], [0.0])),
                    (indefinite_box_problem(), (np.zeros(2), np.zeros(2)))):
        tr = run_admm(p, 2.0, init, stop=StopRule(max_iters=40))
        for rec in tr.records[1:]:
            assert rec.lagrangian_after_z <= rec.lagrangian_before_z + 1e-10


def test_admm_negative_square_divergence():
    p = scalar_consensus(NegativeSquare1D(), NegativeSquare1D())
    up = run_admm(p, 3.0, ([0.1], [-0.2]), EXACT, StopRule(max_iters=200))
    down = run_admm(p, 3.0, ([-0.1], [0.2]), EXACT, StopRule(max_iters=200))
    still = run_admm(p, 3.0, ([0.0], [0.0]), EXACT, StopRule(max_iters=50))
    assert up.verdict == "diverged" and up.final.z[0] > 0
    assert down.verdict == "diverged" and down.final.z[0] < 0
    assert np.all(np.abs(still.column("z")) <= 1e-12)


def test_qpm_matches_adpm_on_convex_quadratic():
    p = quadratic_consensus()
    stop = StopRule(max_iters=2000, primal_tol=1e-9, step_tol=1e-10)
    # zero-multiplier ADPM only creeps toward the optimum here (error ~ 1/t),
    # so the comparison uses the bounded multiplier recursion
    a = run_adpm(p, PenaltySchedule.linear(1.0, 1.0), DualPolicy.bounded(2.0), ([0.0], [0.0]),
                 stop=stop)
    q = run_quadratic_penalty(p, PenaltySchedule.geometric(1.0, 2.0, 1), ([0.0], [0.0]), stop=stop)
    assert a.verdict == q.verdict == "converged"
    assert a.final.x[0] == pytest.approx(q.final.x[0], abs=1e-6)
    assert q.final.x[0] == pytest.approx(1.5, abs=1e-6)


def test_zero_dual_adpm_limit_depends_on_schedule():
    p = quadratic_consensus()
    stop = StopRule(max_iters=200, primal_tol=1e-9, step_tol=1e-10)
    fast = run_adpm(p, PenaltySchedule.geometric(1.0, 2.0, 1), DualPolicy.zero(), ([0.0], [0.0]),
                    stop=stop)
    assert fast.verdict == "converged" and fast.final.r <= 1e-9
    assert abs(fast.final.x[0] - 1.5) > 1e-2


def test_qpm_interval_union_reaches_global_optimum():
    # global optimum of x^2 + z^2 on -2x + z = 0.1, x in [-1,0] u [1,2], z in [0,3]
    tr = run_quadratic_penalty(nonconvex_sets_example(), PenaltySchedule.geometric(1.0, 2.0, 1),
                               ([0.0], [0.0]), stop=StopRule(max_iters=200))
    assert tr.verdict == "converged"
    assert tr.final.x[0] == pytest.approx(-0.04, abs=1e-6)
    assert tr.final.z[0] == pytest.approx(0.02, abs=1e-6)


def test_qpm_zero_objective_becomes_feasible():
    p = StructuredProblem(Zero(2), Zero(1), np.eye(2), -np.ones((2, 1)), [1.0, -1.0])
    tr = run_quadratic_penalty(p, PenaltySchedule.geometric(1.0, 3.0, 1), ([0.0], [0.0, 0.0]),
                               stop=StopRule(max_iters=200))
    assert tr.final.r <= 1e-8


def test_method_of_multipliers():
    tr = run_method_of_multipliers(quadratic_consensus(), 2.0, ([0.0], [0.0]), stop=TIGHT)
    assert tr.final.x[0] == pytest.approx(1.5, abs=1e-8) and tr.final.y[0] == pytest.approx(-1, abs=1e-8)
    opt = run_method_of_multipliers(quadratic_consensus(), 2.0, ([1.5], [-1.0], [1.5]))
    assert opt.verdict == "converged" and opt.iterations == 1
    assert opt.final.primal_step <= 1e-14
    cs = run_method_of_multipliers(cos_sin(), 2.0, ([2.0], [math.cos(2.0)], [2.0]),
                                   stop=StopRule(max_iters=500))
    z = cs.final.z[0]
    assert abs(-math.sin(z) + math.cos(z)) <= 1e-6


def test_adpm_prop1_bound_on_huber_consensus():
    p = huber_consensus()
    tr = run_adpm(p, PenaltySchedule.linear(1.0, 1.0), DualPolicy.zero(), (np.zeros(3), None),
                  stop=StopRule(max_iters=300, primal_tol=1e-12, step_tol=1e-14))
    ratios = prop1_bound_ratios(tr, p)
    assert np.all(ratios <= 1.0 + 1e-9)
    rep = diagnose_trace(tr, p, 1e-6)
    assert rep["prop1_bound_satisfied"] is True


def test_adpm_bounded_dual_stays_bounded():
    tr = run_adpm(indefinite_box_problem(), PenaltySchedule.geometric(1.0, 1.5, 5),
                  DualPolicy.bounded(0.5), (np.zeros(2), np.zeros(2)), stop=StopRule(max_iters=100))
    assert max(np.linalg.norm(r.y) for r in tr.records) <= 0.5 + 1e-12


def test_diagnose_admm_trace():
    p = quadratic_consensus()
    tr = run_admm(p, 2.0, ([0.0], [0.0]), stop=TIGHT)
    rep = diagnose_trace(tr, p, 1e-6)
    assert rep["dual_converged"] and rep["fon_passed"]


def test_diagnose_diverged_trace():
    p = scalar_consensus(NegativeSquare1D(), NegativeSquare1D())
    tr = run_admm(p, 3.0, ([0.1], [-0.2]), EXACT, StopRule(max_iters=200))
    rep = diagnose_trace(tr, p, 1e-6)
    assert rep["dual_converged"] is False and rep["fon"] is None


def test_diagnose_zero_dual_trace():
    p = huber_consensus()
    tr = run_adpm(p, PenaltySchedule.geometric(1.0, 2.0, 1), DualPolicy.zero(), (np.zeros(3), None),
                  stop=StopRule(max_iters=200, patience=20))
    rep = diagnose_trace(tr, p, 1e-4)
    assert rep["dual_converged"]
    assert "set multipliers" in rep["fon_note"]


def test_trace_csv_format():
    tr = run_admm(quadratic_consensus(), 2.0, ([0.0], [0.0]), stop=StopRule(max_iters=5))
    lines = tr.csv_text().splitlines()
    assert lines[0] == "t,rho,r,stationarity,objective,dual_step,x0,z0,y0"
    assert len(lines) == tr.iterations + 2
    row = lines[2].split(",")
    assert float(row[6]) == tr.records[1].x[0]          # 17 digits round-trip exactly
    assert tr.summary()["verdict"] == "max-iters"


def test_divergence_guard_on_box_free_problem():
    p = StructuredProblem(NegativeSquare1D(), Zero(1), [[1.0]], [[-1.0]], [0.0], Box([-1e9], [1e9]))
    tr = run_adpm(p, PenaltySchedule.linear(2.5, 1.0), DualPolicy.zero(), ([1.0], None),
                  stop=StopRule(max_iters=50, divergence_bound=1e3))
    assert tr.verdict in ("diverged", "max-iters", "converged")
    assert all(np.isfinite(r.r) for r in tr.records)
