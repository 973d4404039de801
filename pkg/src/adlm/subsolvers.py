"""Block subproblem solvers.

Every x- or z-update is folded into the canonical form

    minimize  h(v) + w'v + 1/2 v'Pv   subject to  v in S

with ``h`` an objective block, ``w`` the linear shift and ``P`` the penalty
matrix. For the x-update ``w = A'y + rho A'(Bz - c)`` and ``P = rho A'A``.

Strategies
----------
closed-form
    Quadratic or zero ``h`` over the whole space; one symmetric solve.
projected-gradient
    Monotone Armijo backtracking; a local method.
grid-global
    Uniform grid over a bounding box (dimension <= 3) then local polish.
scalar-exact
    Dimension 1: bracket every stationary point on every interval piece,
    refine, and compare values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .blocks import (Cosine1D, Huber, NegativeSquare1D, ObjectiveBlock, Polynomial1D,
                     Quadratic, Zero)
from .errors import UsageError
from .sets import Ball, Box, ConstraintSet, IntervalUnion, WholeSpace, project

__all__ = [
    "SubproblemSpec",
    "SolverPolicy",
    "BlockResult",
    "solve_block",
    "project",
    "scalar_strongly_convex_solve",
    "scalar_derivatives",
    "x_subproblem",
    "z_subproblem",
    "STRATEGIES",
]

STRATEGIES = ("auto", "closed-form", "projected-gradient", "grid-global", "scalar-exact")
DEFAULT_GRID = {1: 1001, 2: 201, 3: 61}
EXACT_TOL = 1e-10
PG_TOL = 1e-8
ROOT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SubproblemSpec:
    objective: ObjectiveBlock
    linear_shift: np.ndarray
    penalty_matrix: np.ndarray
    set: ConstraintSet
    warm_start: np.ndarray

    def __post_init__(self):
        n = self.objective.dim
        w = np.asarray(self.linear_shift, dtype=float).reshape(-1)
        P = np.atleast_2d(np.asarray(self.penalty_matrix, dtype=float))
        v = np.asarray(self.warm_start, dtype=float).reshape(-1)
        if w.shape != (n,) or P.shape != (n, n) or v.shape != (n,) or self.set.dim != n:
            raise UsageError(f"subproblem parts disagree with objective dimension {n}")
        object.__setattr__(self, "linear_shift", w)
        object.__setattr__(self, "penalty_matrix", 0.5 * (P + P.T))
        object.__setattr__(self, "warm_start", v)

    @property
    def dim(self):
        return self.objective.dim

    def value(self, v):
        v = np.asarray(v, dtype=float).reshape(-1)
        return self.objective.value(v) + float(self.linear_shift @ v) + 0.5 * float(v @ self.penalty_matrix @ v)

    def grad(self, v):
        v = np.asarray(v, dtype=float).reshape(-1)
        return self.objective.grad(v) + self.linear_shift + self.penalty_matrix @ v

    def value_batch(self, V):
        V = np.asarray(V, dtype=float).reshape(-1, self.dim)
        quad = 0.5 * np.einsum("ij,jk,ik->i", V, self.penalty_matrix, V)
        return self.objective.value_batch(V) + V @ self.linear_shift + quad


@dataclass(frozen=True)
class SolverPolicy:
    """How a block subproblem is solved.

    ``tol=None`` selects the per-strategy default (1e-10 for exact paths,
    1e-8 for projected gradient). ``grid_radius`` bounds the grid and the
    scalar scan on unbounded sets, centred on the warm start.
    """

    strategy: str = "auto"
    tol: Optional[float] = None
    max_inner_iters: int = 10_000
    grid_points_per_dim: Optional[int] = None
    multistart_count: int = 1
    grid_radius: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise UsageError(f"unknown strategy '{self.strategy}' (choose from {', '.join(STRATEGIES)})")
        if self.tol is not None and not self.tol > 0:
            raise UsageError("solver tol must be positive")
        if self.max_inner_iters < 1 or self.multistart_count < 1:
            raise UsageError("max_inner_iters and multistart_count must be at least 1")
        if self.grid_points_per_dim is not None and self.grid_points_per_dim < 2:
            raise UsageError("grid needs at least 2 points per dimension")
        if not self.grid_radius > 0:
            raise UsageError("grid_radius must be positive")

    def tol_for(self, strategy):
        if self.tol is not None:
            return self.tol
        return PG_TOL if strategy == "projected-gradient" else EXACT_TOL


@dataclass(frozen=True)
class BlockResult:
    x: np.ndarray
    status: str               # global | local | max-iters
    note: str = ""
    iterations: int = 0
    strategy: str = ""


# --------------------------------------------------------------------------
# subproblem construction

def x_subproblem(p, z, y, rho, warm) -> SubproblemSpec:
    """``argmin_x L_rho(x, z, y)`` over ``X`` in canonical form."""
    w = p.A.T @ y + rho * (p.A.T @ (p.B @ z - p.c))
    return SubproblemSpec(p.f, w, rho * (p.A.T @ p.A), p.X, warm)


def z_subproblem(p, x, y, rho, warm) -> SubproblemSpec:
    w = p.B.T @ y + rho * (p.B.T @ (p.A @ x - p.c))
    return SubproblemSpec(p.g, w, rho * (p.B.T @ p.B), p.Z, warm)


# --------------------------------------------------------------------------
# scalar derivative helpers (vectorized over a 1-D array of points)

def scalar_derivatives(block):
    """``(d, d2)`` vectorized first and second derivatives of a 1-D block."""
    if isinstance(block, Zero):
        return (lambda s: np.zeros_like(s)), (lambda s: np.zeros_like(s))
    if isinstance(block, Cosine1D):
        a, ph = block.amplitude, block.phase
        return (lambda s: -a * np.sin(s + ph)), (lambda s: -a * np.cos(s + ph))
    if isinstance(block, NegativeSquare1D):
        return (lambda s: -2.0 * s), (lambda s: np.full_like(s, -2.0))
    if isinstance(block, Quadratic):
        a, b = float(block.Q[0, 0]), float(block.q[0])
        return (lambda s: 2 * a * s + b), (lambda s: np.full_like(s, 2 * a))
    if isinstance(block, Polynomial1D):
        c1 = np.polynomial.polynomial.polyder(np.asarray(block.coefficients, dtype=float))
        c2 = np.polynomial.polynomial.polyder(c1)
        return (lambda s: np.polynomial.polynomial.polyval(s, c1)), \
               (lambda s: np.polynomial.polynomial.polyval(s, c2))
    if isinstance(block, Huber):
        delta, c = block.delta, float(block.center[0])
        return (lambda s: np.clip(s - c, -delta, delta)), \
               (lambda s: (np.abs(s - c) <= delta).astype(float))

    def d(s):
        s = np.asarray(s, dtype=float)
        return np.array([block.grad([t])[0] for t in s.reshape(-1)]).reshape(s.shape)

    def d2(s):
        s = np.asarray(s, dtype=float)
        return np.array([block.hess([t])[0, 0] for t in s.reshape(-1)]).reshape(s.shape)

    return d, d2


def _refine_root(F, F1, lo, hi, x0=None, tol=ROOT_TOL, max_iter=300):
    """Root of ``F`` on ``[lo, hi]`` where ``F(lo) <= 0 <= F(hi)``.

    Safeguarded Newton: a Newton step is taken when it stays inside the
    current bracket, otherwise bisection.
    """
    flo, fhi = F(lo), F(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    x = 0.5 * (lo + hi) if x0 is None or not lo < x0 < hi else x0
    for _ in range(max_iter):
        fx = F(x)
        if abs(fx) <= tol:
            return x
        if fx < 0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            return x
        slope = F1(x)
        xn = x - fx / slope if slope > 0 else np.nan
        x = xn if lo < xn < hi else 0.5 * (lo + hi)
    return x


def scalar_strongly_convex_solve(fprime: Callable, shift: float, rho: float, anchor: float,
                                 warm: float, lipschitz: float = 0.0,
                                 fsecond: Optional[Callable] = None) -> float:
    """Unique root of ``fprime(x) + shift + rho (x - anchor) = 0``.

    Requires ``rho > lipschitz`` (the Lipschitz constant of ``fprime``), so the
    left side is strictly increasing and its root lies within
    ``|F(anchor)| / (rho - lipschitz)`` of ``anchor``.
    """
    if not rho > lipschitz:
        raise UsageError(f"rho = {rho} must exceed the derivative's Lipschitz constant {lipschitz}")
    fp = lambda t: float(fprime(t))
    F = lambda t: fp(t) + shift + rho * (t - anchor)
    F0 = F(anchor)
    if F0 == 0:
        return float(anchor)
    R = abs(F0) / (rho - lipschitz)
    R = R * (1 + 1e-9) + 1e-300
    lo, hi = anchor - R, anchor + R
    # guard against round-off at the bracket ends
    while F(lo) > 0:
        lo -= R
    while F(hi) < 0:
        hi += R
    if fsecond is not None:
        F1 = lambda t: float(fsecond(t)) + rho
    else:
        h = 1e-6
        F1 = lambda t: (fp(t + h) - fp(t - h)) / (2 * h) + rho
    return float(_refine_root(F, F1, lo, hi, x0=float(warm)))


# --------------------------------------------------------------------------
# strategies

def _closed_form(spec: SubproblemSpec, policy):
    obj = spec.objective
    if isinstance(obj, Quadratic):
        H = 2.0 * obj.Q + spec.penalty_matrix
        rhs = -(obj.q + spec.linear_shift)
    elif isinstance(obj, Zero):
        H = spec.penalty_matrix
        rhs = -spec.linear_shift
    elif isinstance(obj, Huber) and _is_positive_diagonal(spec.penalty_matrix):
        if not isinstance(spec.set, WholeSpace):
            raise UsageError("closed-form needs the whole space; use projected-gradient for sets")
        return BlockResult(_huber_diagonal(obj, spec), "global", "separable huber", 1, "closed-form")
    else:
        raise UsageError(f"closed-form needs a quadratic or zero objective, got {obj.kind}")
    if not isinstance(spec.set, WholeSpace):
        raise UsageError("closed-form needs the whole space; use projected-gradient for sets")
    try:
        x = cho_solve(cho_factor(H), rhs)
        return BlockResult(x, "global", "cholesky", 1, "closed-form")
    except np.linalg.LinAlgError:
        pass
    ev = np.linalg.eigvalsh(H)
    scale = max(1.0, float(np.max(np.abs(ev))))
    if ev[0] < -1e-12 * scale:
        raise UsageError("subproblem is unbounded below: the quadratic form is indefinite")
    x, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    if np.linalg.norm(H @ x - rhs) > 1e-8 * max(1.0, np.linalg.norm(rhs)):
        raise UsageError("subproblem is unbounded below along a null direction")
    return BlockResult(x, "global", "singular penalty: minimum-norm minimizer", 1, "closed-form")


def _is_positive_diagonal(P):
    d = np.diag(P)
    return bool(np.all(d > 0) and np.array_equal(P, np.diag(d)))


def _huber_diagonal(obj, spec):
    """Per-coordinate root of ``clip(x - c, -delta, delta) + w + p x``."""
    c, dl = obj.center, obj.delta
    w = spec.linear_shift
    p = np.diag(spec.penalty_matrix)
    x = (c - w) / (1.0 + p)
    hi = x - c > dl
    lo = x - c < -dl
    x = np.where(hi, (-w - dl) / p, x)
    return np.where(lo, (-w + dl) / p, x)


def _lipschitz_estimate(spec, x, rng, probes=8):
    L = spec.objective.lipschitz_derivative()
    if L is not None:
        return L
    scale = 1e-3 * (1.0 + np.linalg.norm(x))
    g0 = spec.objective.grad(x)
    best = 0.0
    for _ in range(probes):
        d = rng.standard_normal(x.shape[0]) * scale
        best = max(best, np.linalg.norm(spec.objective.grad(x + d) - g0) / np.linalg.norm(d))
    return best


def _projected_gradient(spec: SubproblemSpec, policy, x0=None, tol=None):
    S = spec.set
    if not S.special:
        raise UsageError(f"projected gradient needs a special-form set, got {S.form}")
    tol = policy.tol_for("projected-gradient") if tol is None else tol
    x = project(S, spec.warm_start if x0 is None else x0)
    rng = np.random.default_rng([policy.seed, 17])
    Pn = float(np.linalg.norm(spec.penalty_matrix, 2))
    t0 = 1.0 / max(Pn + _lipschitz_estimate(spec, x, rng), 1e-12)
    fx = spec.value(x)
    t = t0
    for k in range(1, policy.max_inner_iters + 1):
        g = spec.grad(x)
        # fixed-step gradient mapping as the stationarity measure
        if np.linalg.norm(x - project(S, x - t0 * g)) <= tol:
            return BlockResult(x, "local", "", k, "projected-gradient")
        # nonincreasing step: growth past 1/L only buys oscillation
        while True:
            xn = project(S, x - t * g)
            d = xn - x
            fn = spec.value(xn)
            if fn <= fx - 1e-4 / t * float(d @ d):
                break
            t *= 0.5
            if t < 1e-20 * t0:
                return BlockResult(x, "local", "line search stalled", k, "projected-gradient")
        x, fx = xn, fn
        if np.linalg.norm(d) <= tol * 1e-3:
            return BlockResult(x, "local", "", k, "projected-gradient")
    return BlockResult(x, "max-iters", "", policy.max_inner_iters, "projected-gradient")


def _pieces(S, center, radius):
    """Interval pieces ``[(a, b, a_true, b_true)]`` of a 1-D set; infinite
    ends are truncated to ``center +- radius`` and flagged not true."""
    if isinstance(S, WholeSpace):
        raw = [(-np.inf, np.inf)]
    elif isinstance(S, Box):
        raw = [(float(S.lower[0]), float(S.upper[0]))]
    elif isinstance(S, Ball):
        raw = [(float(S.center[0] - S.radius), float(S.center[0] + S.radius))]
    elif isinstance(S, IntervalUnion):
        raw = list(S.intervals)
    else:
        raise UsageError(f"scalar-exact does not support {S.form} sets")
    out = []
    for a, b in raw:
        ta, tb = np.isfinite(a), np.isfinite(b)
        a2 = a if ta else min(center, b) - radius
        b2 = b if tb else max(center, a) + radius
        out.append((a2, b2, ta, tb))
    return out


def _scalar_exact(spec: SubproblemSpec, policy):
    obj = spec.objective
    w = float(spec.linear_shift[0])
    P = float(spec.penalty_matrix[0, 0])
    d, d2 = scalar_derivatives(obj)
    L = obj.lipschitz_derivative()
    warm = float(spec.warm_start[0])
    phi = lambda s: spec.value_batch(np.asarray(s, dtype=float).reshape(-1, 1))
    pieces = _pieces(spec.set, warm, policy.grid_radius)

    if L is not None and P > L:
        # strictly convex: one stationary point, clip onto each piece
        root = scalar_strongly_convex_solve(lambda t: d(np.float64(t)), w, P, 0.0, warm, L,
                                            lambda t: d2(np.float64(t)))
        cands = np.array([min(max(root, a if ta else -np.inf), b if tb else np.inf)
                          for a, b, ta, tb in pieces])
        vals = phi(cands)
        k = int(np.argmin(vals))
        return BlockResult(np.array([cands[k]]), "global", "strongly convex", 1, "scalar-exact")

    D = lambda s: d(s) + w + P * s
    D1 = lambda s: d2(s) + P
    cands, window_edge = [], []
    n = max(2001, policy.grid_points_per_dim or 0)
    for a, b, ta, tb in pieces:
        cands += [a, b]
        window_edge += [not ta, not tb]
        if b <= a:
            continue
        s = np.linspace(a, b, n)
        ds = D(s)
        zero = np.abs(ds) <= ROOT_TOL
        cands += list(s[zero])
        window_edge += [False] * int(zero.sum())
        # - to + sign changes bracket local minima
        idx = np.nonzero((ds[:-1] < 0) & (ds[1:] > 0) & ~zero[:-1] & ~zero[1:])[0]
        Fs = lambda t: float(D(np.float64(t)))
        F1s = lambda t: float(D1(np.float64(t)))
        for i in idx:
            cands.append(_refine_root(Fs, F1s, s[i], s[i + 1]))
            window_edge.append(False)
    cands = np.array(cands)
    vals = phi(cands)
    order = np.lexsort((cands, vals))
    k = order[0]
    note = "minimum on the scan window edge; set is unbounded" if window_edge[k] else ""
    return BlockResult(np.array([cands[k]]), "local" if window_edge[k] else "global",
                       note, 1, "scalar-exact")


def _grid_box(spec, policy):
    S = spec.set
    bb = S.bounding_box()
    if bb is not None:
        return bb
    c = spec.warm_start
    lo, hi = c - policy.grid_radius, c + policy.grid_radius
    lb = S.local_bounds(c)
    if isinstance(S, Box):
        lo = np.where(np.isfinite(S.lower), S.lower, lo)
        hi = np.where(np.isfinite(S.upper), S.upper, hi)
    elif lb is not None and not isinstance(S, WholeSpace):
        lo = np.maximum(lo, lb[0])
        hi = np.minimum(hi, lb[1])
    return lo, hi


def _polish(spec, x0, policy, tol):
    """Bound-constrained polish within the convex piece containing ``x0``."""
    lb = spec.set.local_bounds(x0)
    if lb is None:
        r = _projected_gradient(spec, policy, x0=x0, tol=tol)
        return r.x
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b)
              for a, b in zip(*lb)]
    res = minimize(spec.value, x0, jac=spec.grad, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 0.0, "gtol": tol, "maxiter": policy.max_inner_iters})
    x = np.clip(res.x, lb[0], lb[1])
    return x if spec.value(x) <= spec.value(x0) else x0


def _grid_global(spec, policy):
    n = spec.dim
    if n > 3:
        raise UsageError(f"grid-global admits dimension <= 3, got {n}")
    m = policy.grid_points_per_dim or DEFAULT_GRID[n]
    lo, hi = _grid_box(spec, policy)
    axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    G = G[spec.set.contains_batch(G)]
    if G.shape[0] == 0:
        raise UsageError("grid found no feasible point; refine the grid")
    vals = spec.value_batch(G)
    # meshgrid 'ij' order is lexicographic, so a stable sort breaks ties toward
    # the smallest coordinate
    order = np.argsort(vals, kind="stable")[:policy.multistart_count]
    tol = policy.tol_for("grid-global")
    best_x, best_v = None, np.inf
    for k in order:
        x = _polish(spec, G[k], policy, tol)
        v = spec.value(x)
        if v < best_v:
            best_x, best_v = x, v
    return BlockResult(best_x, "global", f"grid {m}^{n}", 1, "grid-global")


def _auto(spec):
    obj = spec.objective
    if isinstance(spec.set, WholeSpace) and isinstance(obj, (Quadratic, Zero)):
        return "closed-form"
    if isinstance(spec.set, WholeSpace) and isinstance(obj, Huber) \
            and _is_positive_diagonal(spec.penalty_matrix):
        return "closed-form"
    if spec.dim == 1 and spec.set.special:
        return "scalar-exact"
    return "projected-gradient"


_DISPATCH = {
    "closed-form": _closed_form,
    "projected-gradient": _projected_gradient,
    "grid-global": _grid_global,
    "scalar-exact": _scalar_exact,
}


def solve_block(spec: SubproblemSpec, policy: SolverPolicy = SolverPolicy()) -> BlockResult:
    """Minimize a canonical block subproblem.

    The result never has a larger subproblem value than a feasible warm start.

    Raises
    ------
    UsageError
        Unsupported strategy/set combination or an unbounded quadratic.
    """
    strategy = _auto(spec) if policy.strategy == "auto" else policy.strategy
    if strategy == "scalar-exact" and spec.dim != 1:
        raise UsageError("scalar-exact needs a 1-D block")
    res = _DISPATCH[strategy](spec, policy)
    x = np.asarray(res.x, dtype=float).reshape(-1)
    if spec.set.special and not isinstance(spec.set, WholeSpace):
        x = spec.set.project(x)
    warm = spec.warm_start
    # keep a feasible warm start only when it is better beyond round-off
    vx = spec.value(x)
    if spec.set.contains(warm, 1e-12) and spec.value(warm) < vx - 1e-12 * (1.0 + abs(vx)):
        return BlockResult(warm.copy(), res.status, "kept warm start (no improvement)",
                           res.iterations, strategy)
    return BlockResult(x, res.status, res.note, res.iterations, strategy)
