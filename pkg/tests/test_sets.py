import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adlm.errors import SpecError, UsageError
from adlm.sets import Ball, Box, Functional, IntervalUnion, WholeSpace, project, set_from_spec

finite = st.floats(-50, 50, allow_nan=False)
vec2 = st.tuples(finite, finite).map(np.array)

BOX = Box([0.0, -1.0], [1.0, 2.0])
BALL = Ball([0.5, -0.5], 1.5)
UNION = IntervalUnion(((-1.0, 0.0), (1.0, 2.0), (4.0, 4.5)))


def test_box_projection_example():
    np.testing.assert_array_equal(project(Box([0, 0], [1, 1]), [2.0, -1.0]), [1.0, 0.0])


def test_interval_union_examples():
    s = IntervalUnion(((-1.0, 0.0), (1.0, 2.0)))
    assert project(s, [0.4])[0] == 0.0
    assert project(s, [0.5])[0] == 0.0          # tie goes left
    assert project(s, [0.6])[0] == 1.0
    assert project(s, [7.0])[0] == 2.0
    assert s.contains([1.5]) and not s.contains([0.5])


def test_ball_projection():
    p = project(Ball([0, 0], 1.0), [3.0, 4.0])
    np.testing.assert_allclose(p, [0.6, 0.8])


def test_functional_set_has_no_projection():
    s = Functional.affine(2, eq_rows=[[1.0, 1.0]], eq_rhs=[1.0])
    with pytest.raises(UsageError):
        project(s, [0.0, 0.0])
    ev, ej, iv, ij = s.constraints([0.25, 0.75])
    assert ev[0] == 0.0 and ej.shape == (1, 2) and iv.size == 0


@given(vec2)
def test_projection_idempotent(v):
    for s in (BOX, BALL, WholeSpace(2)):
        p = project(s, v)
        np.testing.assert_allclose(project(s, p), p, atol=1e-12)
        assert s.contains(p, 1e-9)


@given(finite)
def test_union_projection_idempotent_and_nearest(v):
    p = project(UNION, [v])
    assert project(UNION, p)[0] == p[0]
    grid = np.concatenate([np.linspace(a, b, 201) for a, b in UNION.intervals])
    assert abs(p[0] - v) <= np.min(np.abs(grid - v)) + 1e-12


@given(vec2, vec2)
def test_convex_projection_nonexpansive(u, v):
    for s in (BOX, BALL):
        d = np.linalg.norm(project(s, u) - project(s, v))
        assert d <= np.linalg.norm(u - v) + 1e-9


@settings(max_examples=50)
@given(vec2)
def test_box_violation_zero_iff_inside(v):
    inside = bool(np.all(v >= BOX.lower) and np.all(v <= BOX.upper))
    assert (BOX.violation(v) == 0.0) == inside


@pytest.mark.parametrize("s", [BOX, BALL, UNION, WholeSpace(3),
                               Functional.affine(2, ineq_rows=[[1.0, 0.0]], ineq_rhs=[2.0])])
def test_set_spec_round_trip(s):
    back = set_from_spec(json.loads(json.dumps(s.to_spec())))
    assert back.form == s.form and back.dim == s.dim
    x = np.full(s.dim, 0.3)
    assert back.violation(x) == pytest.approx(s.violation(x))


def test_set_flags():
    assert BOX.is_convex and BOX.is_compact
    assert not UNION.is_convex
    assert WholeSpace(2).is_convex and not WholeSpace(2).is_compact


def test_set_spec_errors():
    with pytest.raises(SpecError):
        set_from_spec({"kind": "box", "lower": [0]}, "X")
    with pytest.raises(SpecError):
        set_from_spec({"kind": "interval-union-1d", "intervals": [[1, 2], [0, 1.5]]}, "X")
    with pytest.raises(SpecError) as e:
        set_from_spec({"kind": "torus"}, "Z")
    assert e.value.field == "Z.kind"
    with pytest.raises(UsageError):
        Box([1.0], [0.0])
