"""Small reference problems used by tests, the acceptance suite and the CLI."""

import math

import numpy as np

from .blocks import Cosine1D, Huber, ObjectiveBlock, Quadratic, Zero
from .problem import StructuredProblem
from .sets import Box, IntervalUnion


def quadratic_consensus():
    """``(x-1)^2 + (z-2)^2`` subject to ``x - z = 0``; KKT point (1.5, 1.5, y=-1)."""
    f = Quadratic([[1.0]], [-2.0], 1.0)
    g = Quadratic([[1.0]], [-4.0], 4.0)
    return StructuredProblem(f, g, [[1.0]], [[-1.0]], [0.0])


def nonconvex_sets_example():
    """``x^2 + z^2`` s.t. ``-2x + z = 0.1``, ``x in [-1,0] u [1,2]``, ``z in [0,3]``.

    Alternating penalty iterations started from ``z=0`` stall here; the
    feasible set is nonconvex in ``x``.
    """
    sq = Quadratic([[1.0]])
    return StructuredProblem(sq, sq, [[-2.0]], [[1.0]], [0.1],
                             IntervalUnion(((-1.0, 0.0), (1.0, 2.0))), Box([0.0], [3.0]))


def scalar_consensus(f: ObjectiveBlock, g: ObjectiveBlock):
    """Scalar problem ``f(x) + g(z)`` s.t. ``x = z`` on the whole line."""
    if f.dim != 1 or g.dim != 1:
        raise ValueError("scalar consensus needs 1-D blocks")
    return StructuredProblem(f, g, [[1.0]], [[-1.0]], [0.0])


def cos_sin():
    return scalar_consensus(Cosine1D(), Cosine1D(1.0, -math.pi / 2))


def consensus_matrix(copies_per_var):
    """Selection matrix ``E`` stacking ``copies_per_var[k]`` copies of variable k."""
    rows = []
    for k, m in enumerate(copies_per_var):
        for _ in range(m):
            e = np.zeros(len(copies_per_var))
            e[k] = 1.0
            rows.append(e)
    return np.array(rows)


def huber_consensus(delta=0.01, copies=(2, 3, 1), seed=0):
    """Unconstrained consensus ``sum_i huber(x_i - a_i)`` s.t. ``x = E z``.

    ``g = 0``, ``A = I``, ``c = 0`` and ``B = -E`` with ``E`` of full column
    rank: the setting in which zero-multiplier penalty iterations provably
    reach feasibility.
    """
    E = consensus_matrix(copies)
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1.0, 1.0, E.shape[0])
    f = Huber(delta, E.shape[0], centers)
    return StructuredProblem(f, Zero(E.shape[1]), np.eye(E.shape[0]), -E, np.zeros(E.shape[0]))


def indefinite_box_problem():
    """Indefinite quadratic ``f`` and convex ``g`` over boxes, full-rank ``A``, ``B``.

    ``f(x) = x'Qx + q'x`` with ``Q`` indefinite; ``A = I`` so ``x'Qx > 0`` on
    the (trivial) null space of ``A``. Feasible: ``(x0, z0)`` below satisfies
    the coupling constraint strictly inside both boxes.
    """
    Q = np.array([[1.0, 0.0], [0.0, -2.0]])
    f = Quadratic(Q, [0.3, -0.1])
    g = Quadratic(np.eye(2) * 0.5, [0.2, 0.0])
    A = np.eye(2)
    B = np.array([[1.0, 0.5], [0.0, 1.0]])
    x0 = np.array([0.2, -0.3])
    z0 = np.array([-0.1, 0.4])
    c = A @ x0 + B @ z0
    return StructuredProblem(f, g, A, B, c, Box([-1, -1], [1, 1]), Box([-1, -1], [1, 1]))
