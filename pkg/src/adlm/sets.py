"""Constraint sets ``X`` and ``Z``.

Special forms (whole space, box, ball, 1-D interval union) support exact
Euclidean projection. Every form can report its constraints as smooth
functions ``eq(x) = 0``, ``ineq(x) <= 0`` together with their Jacobians,
which is what the first-order certificate consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import SpecError, UsageError

__all__ = [
    "ConstraintSet",
    "WholeSpace",
    "Box",
    "Ball",
    "IntervalUnion",
    "Functional",
    "ProductSet",
    "project",
    "set_from_spec",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _point(s, v):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != s.dim:
        raise UsageError(f"{s.form} set has dimension {s.dim}, got a vector of length {v.shape[0]}")
    return v


class ConstraintSet:
    form = "abstract"
    dim: int
    special = True

    def project(self, v) -> np.ndarray:
        raise UsageError(f"projection onto a {self.form} set is not supported")

    def constraints(self, x):
        """``(eq_vals, eq_jac, ineq_vals, ineq_jac)`` describing the set near ``x``."""
        raise NotImplementedError

    def violation(self, x) -> float:
        """Largest constraint violation at ``x`` (0 inside the set)."""
        ev, _, iv, _ = self.constraints(x)
        worst = 0.0
        if ev.size:
            worst = max(worst, float(np.max(np.abs(ev))))
        if iv.size:
            worst = max(worst, float(np.max(iv)))
        return worst

    def contains(self, x, tol=0.0) -> bool:
        return self.violation(x) <= tol

    def contains_batch(self, X, tol=0.0) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.array([self.contains(row, tol) for row in X], dtype=bool)

    def bounding_box(self):
        """``(lower, upper)`` or ``None`` when the set is unbounded."""
        return None

    def local_bounds(self, v):
        """Box bounds of the convex piece of the set containing ``v``, for
        bound-constrained polishing; ``None`` if the piece is not a box."""
        return None

    @property
    def is_convex(self) -> Optional[bool]:
        return None

    @property
    def is_compact(self) -> Optional[bool]:
        return None

    def counts(self):
        """Number of (equality, inequality) constraints in functional form."""
        ev, _, iv, _ = self.constraints(self._any_point())
        return ev.size, iv.size

    def _any_point(self):
        return np.zeros(self.dim)

    def to_spec(self) -> dict:
        raise NotImplementedError


def _empty(dim):
    return np.zeros(0), np.zeros((0, dim)), np.zeros(0), np.zeros((0, dim))


@dataclass(frozen=True, eq=False)
class WholeSpace(ConstraintSet):
    dim: int = 1
    form = "whole-space"

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dimension must be positive")

    def project(self, v):
        return _point(self, v).copy()

    def constraints(self, x):
        _point(self, x)
        return _empty(self.dim)

    def violation(self, x):
        _point(self, x)
        return 0.0

    def contains_batch(self, X, tol=0.0):
        return np.ones(np.asarray(X).reshape(-1, self.dim).shape[0], dtype=bool)

    def local_bounds(self, v):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    is_convex = property(lambda self: True)
    is_compact = property(lambda self: False)

    def to_spec(self):
        return {"kind": self.form, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class Box(ConstraintSet):
    lower: np.ndarray
    upper: np.ndarray
    form = "box"

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise UsageError("box bounds must be non-empty and of equal length")
        if np.any(lo > hi):
            raise UsageError("box needs lower <= upper componentwise")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def dim(self):
        return self.lower.shape[0]

    def project(self, v):
        return np.clip(_point(self, v), self.lower, self.upper)

    def constraints(self, x):
        x = _point(self, x)
        rows, vals = [], []
        eye = np.eye(self.dim)
        for i in range(self.dim):
            if np.isfinite(self.lower[i]):
                vals.append(self.lower[i] - x[i])
                rows.append(-eye[i])
            if np.isfinite(self.upper[i]):
                vals.append(x[i] - self.upper[i])
                rows.append(eye[i])
        J = np.array(rows).reshape(-1, self.dim)
        return np.zeros(0), np.zeros((0, self.dim)), np.array(vals, dtype=float), J

    def violation(self, x):
        x = _point(self, x)
        return float(max(0.0, np.max(self.lower - x), np.max(x - self.upper)))

    def contains_batch(self, X, tol=0.0):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.all((X >= self.lower - tol) & (X <= self.upper + tol), axis=1)

    def bounding_box(self):
        if np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)):
            return np.array(self.lower), np.array(self.upper)
        return None

    def local_bounds(self, v):
        return np.array(self.lower), np.array(self.upper)

    is_convex = property(lambda self: True)
    is_compact = property(lambda self: self.bounding_box() is not None)

    def _any_point(self):
        return np.clip(np.zeros(self.dim), self.lower, self.upper)

    def to_spec(self):
        return {"kind": self.form, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Ball(ConstraintSet):
    center: np.ndarray
    radius: float
    form = "ball"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if c.size == 0:
            raise UsageError("ball center must be non-empty")
        if not self.radius >= 0:
            raise UsageError("ball radius must be nonnegative")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.shape[0]

    def project(self, v):
        v = _point(self, v)
        d = v - self.center
        n = np.linalg.norm(d)
        if n <= self.radius:
            return v.copy()
        return self.center + d * (self.radius / n)

    def constraints(self, x):
        x = _point(self, x)
        d = x - self.center
        return (np.zeros(0), np.zeros((0, self.dim)),
                np.array([d @ d - self.radius ** 2]), (2.0 * d)[None, :])

    def violation(self, x):
        x = _point(self, x)
        return float(max(0.0, np.linalg.norm(x - self.center) - self.radius))

    def contains_batch(self, X, tol=0.0):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.linalg.norm(X - self.center, axis=1) <= self.radius + tol

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def local_bounds(self, v):
        if self.dim == 1:
            return self.bounding_box()
        return None

    is_convex = property(lambda self: True)
    is_compact = property(lambda self: True)

    def _any_point(self):
        return np.array(self.center)

    def to_spec(self):
        return {"kind": self.form, "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class IntervalUnion(ConstraintSet):
    """Union of sorted, disjoint, closed intervals on the real line.

    Its functional description is local: near ``x`` the set is described by
    the two bound constraints of the interval nearest to ``x``.
    """

    intervals: tuple
    form = "interval-union-1d"
    dim = 1

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        if not iv:
            raise UsageError("interval union needs at least one interval")
        for a, b in iv:
            if not a <= b:
                raise UsageError(f"interval [{a}, {b}] has left end above right end")
        for (a0, b0), (a1, b1) in zip(iv, iv[1:]):
            if not b0 < a1:
                raise UsageError("intervals must be sorted and pairwise disjoint")
        object.__setattr__(self, "intervals", iv)

    def _nearest(self, s):
        """Index of the interval nearest to scalar ``s``; ties go left."""
        best, best_d = 0, np.inf
        for k, (a, b) in enumerate(self.intervals):
            d = max(a - s, 0.0, s - b)
            if d < best_d:
                best, best_d = k, d
        return best

    def project(self, v):
        s = float(_point(self, v)[0])
        a, b = self.intervals[self._nearest(s)]
        return np.array([min(max(s, a), b)])

    def constraints(self, x):
        s = float(_point(self, x)[0])
        a, b = self.intervals[self._nearest(s)]
        vals, rows = [], []
        if np.isfinite(a):
            vals.append(a - s)
            rows.append([-1.0])
        if np.isfinite(b):
            vals.append(s - b)
            rows.append([1.0])
        return np.zeros(0), np.zeros((0, 1)), np.array(vals), np.array(rows).reshape(-1, 1)

    def violation(self, x):
        s = float(_point(self, x)[0])
        return float(min(max(a - s, 0.0, s - b) for a, b in self.intervals))

    def contains_batch(self, X, tol=0.0):
        s = np.asarray(X, dtype=float).reshape(-1)
        inside = np.zeros(s.shape, dtype=bool)
        for a, b in self.intervals:
            inside |= (s >= a - tol) & (s <= b + tol)
        return inside

    def bounding_box(self):
        a, b = self.intervals[0][0], self.intervals[-1][1]
        if np.isfinite(a) and np.isfinite(b):
            return np.array([a]), np.array([b])
        return None

    def local_bounds(self, v):
        a, b = self.intervals[self._nearest(float(np.asarray(v).reshape(-1)[0]))]
        return np.array([a]), np.array([b])

    is_convex = property(lambda self: len(self.intervals) == 1)
    is_compact = property(lambda self: self.bounding_box() is not None)

    def counts(self):
        return 0, len(self.constraints(self._any_point())[2])

    def _any_point(self):
        a, b = self.intervals[0]
        return np.array([a if np.isfinite(a) else min(b, 0.0)])

    def to_spec(self):
        return {"kind": self.form, "intervals": [list(p) for p in self.intervals]}


@dataclass(frozen=True, eq=False)
class Functional(ConstraintSet):
    """``{x : eq_k(x) = 0, ineq_k(x) <= 0}`` from user evaluators.

    Each constraint is a ``(value, grad)`` pair of callables. ``convex`` is
    whatever the caller asserts; it is never inferred.
    """

    dim: int
    equalities: tuple = ()
    inequalities: tuple = ()
    convex: Optional[bool] = None
    spec: Optional[dict] = None
    form = "functional"
    special = False

    def __post_init__(self):
        object.__setattr__(self, "equalities", tuple(self.equalities))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))

    @classmethod
    def affine(cls, dim, eq_rows=(), eq_rhs=(), ineq_rows=(), ineq_rhs=()):
        """Affine constraints ``a'x - b = 0`` and ``a'x - b <= 0``."""
        def make(a, b):
            a = _frozen(a)
            b = float(b)
            return (lambda x, a=a, b=b: float(a @ x - b), lambda x, a=a: np.array(a))
        eqs = tuple(make(a, b) for a, b in zip(eq_rows, eq_rhs))
        ineqs = tuple(make(a, b) for a, b in zip(ineq_rows, ineq_rhs))
        spec = {"kind": "functional", "dim": dim,
                "equalities": [{"a": list(map(float, a)), "b": float(b)} for a, b in zip(eq_rows, eq_rhs)],
                "inequalities": [{"a": list(map(float, a)), "b": float(b)}
                                 for a, b in zip(ineq_rows, ineq_rhs)]}
        return cls(dim, eqs, ineqs, convex=True, spec=spec)

    def constraints(self, x):
        x = _point(self, x)
        ev = np.array([c[0](x) for c in self.equalities], dtype=float)
        ej = np.array([c[1](x) for c in self.equalities], dtype=float).reshape(-1, self.dim)
        iv = np.array([c[0](x) for c in self.inequalities], dtype=float)
        ij = np.array([c[1](x) for c in self.inequalities], dtype=float).reshape(-1, self.dim)
        return ev, ej, iv, ij

    def counts(self):
        return len(self.equalities), len(self.inequalities)

    is_convex = property(lambda self: self.convex)

    def to_spec(self):
        if self.spec is None:
            raise UsageError("functional set built from callables has no JSON form")
        return dict(self.spec)


@dataclass(frozen=True, eq=False)
class ProductSet(ConstraintSet):
    """Cartesian product, used for stacked ``(x, z)`` joint updates."""

    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def form(self):
        return "product"

    @property
    def dim(self):
        return sum(p.dim for p in self.parts)

    @property
    def special(self):
        return all(p.special for p in self.parts)

    def _split(self, v):
        v = _point(self, v)
        out, k = [], 0
        for p in self.parts:
            out.append(v[k:k + p.dim])
            k += p.dim
        return out

    def project(self, v):
        return np.concatenate([p.project(s) for p, s in zip(self.parts, self._split(v))])

    def constraints(self, x):
        evs, ejs, ivs, ijs = [], [], [], []
        offset = 0
        n = self.dim
        for p, s in zip(self.parts, self._split(x)):
            ev, ej, iv, ij = p.constraints(s)
            pad = lambda J: np.hstack([np.zeros((J.shape[0], offset)), J,
                                       np.zeros((J.shape[0], n - offset - p.dim))])
            evs.append(ev)
            ejs.append(pad(ej.reshape(-1, p.dim)))
            ivs.append(iv)
            ijs.append(pad(ij.reshape(-1, p.dim)))
            offset += p.dim
        return (np.concatenate(evs), np.vstack(ejs), np.concatenate(ivs), np.vstack(ijs))

    def violation(self, x):
        return max(p.violation(s) for p, s in zip(self.parts, self._split(x)))

    def contains_batch(self, X, tol=0.0):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        ok = np.ones(X.shape[0], dtype=bool)
        k = 0
        for p in self.parts:
            ok &= p.contains_batch(X[:, k:k + p.dim], tol)
            k += p.dim
        return ok

    def bounding_box(self):
        boxes = [p.bounding_box() for p in self.parts]
        if any(b is None for b in boxes):
            return None
        return np.concatenate([b[0] for b in boxes]), np.concatenate([b[1] for b in boxes])

    def local_bounds(self, v):
        bs = [p.local_bounds(s) for p, s in zip(self.parts, self._split(v))]
        if any(b is None for b in bs):
            return None
        return np.concatenate([b[0] for b in bs]), np.concatenate([b[1] for b in bs])

    @property
    def is_convex(self):
        flags = [p.is_convex for p in self.parts]
        if any(f is False for f in flags):
            return False
        return None if any(f is None for f in flags) else True

    def _any_point(self):
        return np.concatenate([p._any_point() for p in self.parts])


def project(s: ConstraintSet, v) -> np.ndarray:
    """Euclidean projection of ``v`` onto a special-form set."""
    if not s.special:
        raise UsageError(f"projection onto a {s.form} set is not supported; "
                         "use a closed-form or grid path with a special-form set")
    return s.project(v)


def set_from_spec(spec, path="set") -> ConstraintSet:
    if not isinstance(spec, dict):
        raise SpecError("set spec must be an object", path)
    kind = spec.get("kind")
    try:
        if kind == "whole-space":
            return WholeSpace(int(spec.get("dim", 1)))
        if kind == "box":
            return Box(spec["lower"], spec["upper"])
        if kind == "ball":
            return Ball(spec["center"], float(spec["radius"]))
        if kind == "interval-union-1d":
            return IntervalUnion(tuple(tuple(p) for p in spec["intervals"]))
        if kind == "functional":
            dim = int(spec["dim"])
            eq = spec.get("equalities", [])
            ineq = spec.get("inequalities", [])
            return Functional.affine(dim, [e["a"] for e in eq], [e["b"] for e in eq],
                                     [e["a"] for e in ineq], [e["b"] for e in ineq])
    except KeyError as exc:
        raise SpecError(f"missing required field {exc}", path) from None
    except (UsageError, TypeError, ValueError) as exc:
        raise SpecError(str(exc), path) from None
    if kind is None:
        raise SpecError("missing required field 'kind'", path)
    raise SpecError(f"unknown set kind '{kind}'", f"{path}.kind")
