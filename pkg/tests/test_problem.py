import json
import math

import numpy as np
import pytest

from adlm.blocks import Cosine1D, Quadratic
from adlm.errors import SpecError, UsageError
from adlm.instances import cos_sin, huber_consensus, nonconvex_sets_example, quadratic_consensus
from adlm.problem import (PrimalDualPoint, StructuredProblem, eval_aug_lagrangian, eval_objective,
                          eval_primal_residual, grad_aug_lagrangian, load_problem,
                          problem_from_spec, problem_to_spec)

SQUARE = Quadratic([[1.0]])


def test_objective_examples():
    p = StructuredProblem(SQUARE, SQUARE, [[1.0]], [[-1.0]], [0.0])
    assert eval_objective(p, [1.0], [2.0]) == 5.0
    assert eval_objective(cos_sin(), [0.0], [0.0]) == pytest.approx(1.0, abs=1e-15)
    assert eval_objective(nonconvex_sets_example(), [0.0], [0.0]) == 0.0


def test_aug_lagrangian_examples():
    p = quadratic_consensus()
    assert eval_aug_lagrangian(p, PrimalDualPoint([0.0], [0.0], [0.0], 2.0)) == 5.0
    assert eval_aug_lagrangian(p, PrimalDualPoint([1.0], [0.0], [1.0], 2.0)) == 6.0
    # feasible point: penalty and multiplier terms vanish
    assert eval_aug_lagrangian(p, PrimalDualPoint([0.7], [0.7], [3.0], 9.0)) == \
        pytest.approx(eval_objective(p, [0.7], [0.7]))


def test_primal_residual_examples():
    assert eval_primal_residual(nonconvex_sets_example(), [0.0], [0.0]) == pytest.approx(0.1)
    p = StructuredProblem(Quadratic(np.eye(2)), Quadratic(np.eye(2)), np.eye(2), -np.eye(2), [0, 0])
    assert eval_primal_residual(p, [1.0, 1.0], [0.0, 0.0]) == pytest.approx(math.sqrt(2))
    assert eval_primal_residual(p, [0.3, 0.2], [0.3, 0.2]) == 0.0


def test_grad_aug_lagrangian_examples():
    p = quadratic_consensus()
    g = grad_aug_lagrangian(p, PrimalDualPoint([0.0], [0.0], [0.0], 2.0), "x")
    assert g[0] == -2.0
    # block minimizer: x minimizes (x-1)^2 + (rho/2)(x - 0)^2 at x = 2/(2+rho)
    g = grad_aug_lagrangian(p, PrimalDualPoint([0.5], [0.0], [0.0], 2.0), "x")
    assert g[0] == pytest.approx(0.0)
    with pytest.raises(UsageError):
        grad_aug_lagrangian(p, PrimalDualPoint([0.0], [0.0], [0.0]), "w")


@pytest.mark.parametrize("make", [quadratic_consensus, cos_sin, huber_consensus])
def test_grad_aug_lagrangian_finite_differences(make):
    p = make()
    rng = np.random.default_rng(4)
    for _ in range(100):
        x = rng.uniform(-2, 2, p.p1)
        z = rng.uniform(-2, 2, p.p2)
        y = rng.normal(size=p.q)
        rho = rng.uniform(0.5, 5)
        for block in ("x", "z"):
            g = grad_aug_lagrangian(p, PrimalDualPoint(x, z, y, rho), block)
            v = x if block == "x" else z
            fd = np.empty_like(v)
            for i in range(v.size):
                e = np.zeros_like(v)
                e[i] = 1e-6
                args_p = (x + e, z) if block == "x" else (x, z + e)
                args_m = (x - e, z) if block == "x" else (x, z - e)
                fd[i] = (eval_aug_lagrangian(p, PrimalDualPoint(*args_p, y, rho))
                         - eval_aug_lagrangian(p, PrimalDualPoint(*args_m, y, rho))) / 2e-6
            assert np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(fd)) <= 1e-6


def test_shape_errors():
    with pytest.raises(UsageError):
        StructuredProblem(SQUARE, SQUARE, [[1.0, 2.0]], [[1.0]], [0.0])
    with pytest.raises(UsageError):
        PrimalDualPoint([0.0], [0.0], [0.0], rho=0.0)
    with pytest.raises(UsageError):
        eval_objective(quadratic_consensus(), [0.0, 1.0], [0.0])


@pytest.mark.parametrize("make", [quadratic_consensus, nonconvex_sets_example, cos_sin])
def test_problem_spec_round_trip(make, tmp_path):
    p = make()
    path = tmp_path / "p.json"
    path.write_text(json.dumps(problem_to_spec(p)))
    q = load_problem(str(path))
    np.testing.assert_array_equal(q.A, p.A)
    np.testing.assert_array_equal(q.B, p.B)
    assert q.X.form == p.X.form and q.Z.form == p.Z.form
    assert eval_objective(q, [0.3], [0.4]) == eval_objective(p, [0.3], [0.4])


def test_spec_diagnostics(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"f": {"kind": "quadratic", "Q": [[1]]},\n "g": }')
    with pytest.raises(SpecError) as e:
        load_problem(str(bad))
    assert "line 2" in str(e.value)
    with pytest.raises(SpecError) as e:
        problem_from_spec({"f": {"kind": "zero"}, "g": {"kind": "zero"}})
    assert "'c'" in str(e.value)
    with pytest.raises(SpecError) as e:
        problem_from_spec({"f": {"kind": "zero"}, "g": {"kind": "zero"}, "c": [0],
                           "A": [[1, 2]], "B": [[1]]})
    assert "problem.A" in str(e.value)


def test_cosine_sine_problem():
    p = cos_sin()
    assert isinstance(p.f, Cosine1D) and p.g.value([math.pi / 2]) == pytest.approx(1.0)
