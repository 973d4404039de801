"""Objective blocks: the ``f`` and ``g`` halves of a structured problem.

Every block is immutable, knows its dimension, and exposes ``value``,
``grad`` and ``hess`` evaluators. ``value_batch`` evaluates many points at
once (rows of a 2-D array) and is what the grid search leans on.

Kind tags (used verbatim in problem-spec JSON)::

    zero, quadratic, polynomial-1d, cosine-1d, negative-square-1d,
    huber, range-residual, sum
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import SpecError, UsageError

__all__ = [
    "ObjectiveBlock",
    "Zero",
    "Quadratic",
    "Polynomial1D",
    "Cosine1D",
    "NegativeSquare1D",
    "Huber",
    "RangeTerm",
    "RangeResidual",
    "SumBlock",
    "block_from_spec",
    "scalar_block",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_point(block, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != block.dim:
        raise UsageError(
            f"{block.kind} block expects a vector of length {block.dim}, got {x.shape[0]}")
    return x


class ObjectiveBlock:
    """Base class. Subclasses set ``kind`` and ``dim`` and implement
    ``value`` and ``grad``."""

    kind = "abstract"
    dim: int

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x) -> np.ndarray:
        """Hessian by central differences of the analytic gradient."""
        x = _as_point(self, x)
        h = 1e-6 * (1.0 + np.linalg.norm(x))
        H = np.empty((self.dim, self.dim))
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            H[:, i] = (self.grad(x + e) - self.grad(x - e)) / (2 * h)
        return 0.5 * (H + H.T)

    def value_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.array([self.value(row) for row in X])

    def lipschitz_derivative(self) -> Optional[float]:
        """Global Lipschitz constant of the gradient, if one is known
        analytically; ``None`` when it is unbounded or unknown."""
        return None

    def to_spec(self) -> dict:
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True, eq=False)
class Zero(ObjectiveBlock):
    dim: int = 1
    kind = "zero"

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dimension must be positive")

    def value(self, x):
        _as_point(self, x)
        return 0.0

    def grad(self, x):
        _as_point(self, x)
        return np.zeros(self.dim)

    def hess(self, x):
        return np.zeros((self.dim, self.dim))

    def value_batch(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.zeros(X.shape[0])

    def lipschitz_derivative(self):
        return 0.0

    def to_spec(self):
        return {"kind": self.kind, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class Quadratic(ObjectiveBlock):
    """``x'Qx + q'x + const``. ``Q`` is symmetrized on construction."""

    Q: np.ndarray
    q: Optional[np.ndarray] = None
    const: float = 0.0
    kind = "quadratic"

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise UsageError(f"Q must be square, got shape {Q.shape}")
        n = Q.shape[0]
        q = np.zeros(n) if self.q is None else np.asarray(self.q, dtype=float).reshape(-1)
        if q.shape[0] != n:
            raise UsageError(f"q has length {q.shape[0]}, Q is {n}x{n}")
        object.__setattr__(self, "Q", _frozen(0.5 * (Q + Q.T)))
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "const", float(self.const))

    @property
    def dim(self):
        return self.Q.shape[0]

    def value(self, x):
        x = _as_point(self, x)
        return float(x @ self.Q @ x + self.q @ x + self.const)

    def grad(self, x):
        x = _as_point(self, x)
        return 2.0 * self.Q @ x + self.q

    def hess(self, x):
        return 2.0 * np.array(self.Q)

    def value_batch(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.einsum("ij,jk,ik->i", X, self.Q, X) + X @ self.q + self.const

    def lipschitz_derivative(self):
        return float(2.0 * np.max(np.abs(np.linalg.eigvalsh(self.Q))))

    def to_spec(self):
        return {"kind": self.kind, "Q": self.Q.tolist(), "q": self.q.tolist(),
                "const": self.const}


@dataclass(frozen=True, eq=False)
class Polynomial1D(ObjectiveBlock):
    """Scalar polynomial, coefficients in ascending order (``c0 + c1 x + ...``)."""

    coefficients: Sequence[float]
    kind = "polynomial-1d"
    dim = 1

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if c.size == 0:
            raise UsageError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coefficients", _frozen(c))

    def value(self, x):
        x = _as_point(self, x)
        return float(npoly.polyval(x[0], self.coefficients))

    def grad(self, x):
        x = _as_point(self, x)
        return np.array([npoly.polyval(x[0], npoly.polyder(self.coefficients))])

    def hess(self, x):
        x = _as_point(self, x)
        return np.array([[npoly.polyval(x[0], npoly.polyder(self.coefficients, 2))]])

    def value_batch(self, X):
        return npoly.polyval(np.asarray(X, dtype=float).reshape(-1), self.coefficients)

    def lipschitz_derivative(self):
        c = np.trim_zeros(np.array(self.coefficients), "b")
        if c.size <= 2:
            return 0.0
        if c.size == 3:
            return float(2.0 * abs(c[2]))
        return None

    def to_spec(self):
        return {"kind": self.kind, "coefficients": list(map(float, self.coefficients))}


@dataclass(frozen=True, eq=False)
class Cosine1D(ObjectiveBlock):
    """``amplitude * cos(x + phase)``; ``phase=-pi/2`` gives ``sin``."""

    amplitude: float = 1.0
    phase: float = 0.0
    kind = "cosine-1d"
    dim = 1

    def value(self, x):
        x = _as_point(self, x)
        return float(self.amplitude * math.cos(x[0] + self.phase))

    def grad(self, x):
        x = _as_point(self, x)
        return np.array([-self.amplitude * math.sin(x[0] + self.phase)])

    def hess(self, x):
        x = _as_point(self, x)
        return np.array([[-self.amplitude * math.cos(x[0] + self.phase)]])

    def value_batch(self, X):
        return self.amplitude * np.cos(np.asarray(X, dtype=float).reshape(-1) + self.phase)

    def lipschitz_derivative(self):
        return float(abs(self.amplitude))

    def to_spec(self):
        return {"kind": self.kind, "amplitude": self.amplitude, "phase": self.phase}


@dataclass(frozen=True, eq=False)
class NegativeSquare1D(ObjectiveBlock):
    kind = "negative-square-1d"
    dim = 1

    def value(self, x):
        x = _as_point(self, x)
        return float(-x[0] * x[0])

    def grad(self, x):
        x = _as_point(self, x)
        return np.array([-2.0 * x[0]])

    def hess(self, x):
        return np.array([[-2.0]])

    def value_batch(self, X):
        X = np.asarray(X, dtype=float).reshape(-1)
        return -X * X

    def lipschitz_derivative(self):
        return 2.0

    def to_spec(self):
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class Huber(ObjectiveBlock):
    """Sum over coordinates of the Huber loss of ``x_i - center_i``.

    Each coordinate contributes ``u^2/2`` for ``|u| <= delta`` and
    ``delta*(|u| - delta/2)`` beyond, so every gradient entry is bounded by
    ``delta``.
    """

    delta: float
    dim: int = 1
    center: Optional[np.ndarray] = None
    kind = "huber"

    def __post_init__(self):
        if not self.delta > 0:
            raise UsageError("huber delta must be positive")
        if self.dim < 1:
            raise UsageError("dimension must be positive")
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, dtype=float).reshape(-1)
        if c.shape[0] != self.dim:
            raise UsageError(f"center has length {c.shape[0]}, dim is {self.dim}")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "delta", float(self.delta))

    def _elementwise(self, U):
        a = np.abs(U)
        return np.where(a <= self.delta, 0.5 * U * U, self.delta * (a - 0.5 * self.delta))

    def value(self, x):
        x = _as_point(self, x)
        return float(np.sum(self._elementwise(x - self.center)))

    def grad(self, x):
        x = _as_point(self, x)
        return np.clip(x - self.center, -self.delta, self.delta)

    def hess(self, x):
        x = _as_point(self, x)
        return np.diag((np.abs(x - self.center) <= self.delta).astype(float))

    def value_batch(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.sum(self._elementwise(X - self.center), axis=1)

    def lipschitz_derivative(self):
        return 1.0

    def to_spec(self):
        return {"kind": self.kind, "delta": self.delta, "dim": self.dim,
                "center": self.center.tolist()}


@dataclass(frozen=True)
class RangeTerm:
    """One squared-range residual ``(d2 - ||p_i - p_j||^2)^2``.

    ``j`` indexes a second point of the block; when ``j`` is ``None`` the
    term is measured against the fixed ``anchor`` instead.
    """

    i: int
    d2: float
    j: Optional[int] = None
    anchor: Optional[tuple] = None

    def __post_init__(self):
        if (self.j is None) == (self.anchor is None):
            raise UsageError("a range term needs exactly one of j or anchor")
        if self.anchor is not None:
            object.__setattr__(self, "anchor", tuple(float(a) for a in self.anchor))


@dataclass(frozen=True, eq=False)
class RangeResidual(ObjectiveBlock):
    """Sum of squared-distance residuals over 2-D points.

    The block variable is a flat vector of ``dim // 2`` planar points,
    ``(p_0x, p_0y, p_1x, p_1y, ...)``.
    """

    dim: int
    terms: tuple = ()
    kind = "range-residual"

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise UsageError("range-residual dimension must be a positive even number")
        terms = tuple(self.terms)
        npts = self.dim // 2
        for k, t in enumerate(terms):
            idx = [t.i] + ([t.j] if t.j is not None else [])
            if any(not 0 <= i < npts for i in idx):
                raise UsageError(f"range term {k} references a point outside 0..{npts - 1}")
        object.__setattr__(self, "terms", terms)
        # flat arrays for vectorized evaluation
        i = np.array([t.i for t in terms], dtype=int)
        has_j = np.array([t.j is not None for t in terms], dtype=bool)
        j = np.array([t.j if t.j is not None else 0 for t in terms], dtype=int)
        anc = np.array([t.anchor if t.anchor is not None else (0.0, 0.0) for t in terms],
                       dtype=float).reshape(-1, 2)
        d2 = np.array([t.d2 for t in terms], dtype=float)
        object.__setattr__(self, "_arrays", (i, has_j, j, anc, d2))

    def _diffs(self, P):
        i, has_j, j, anc, _ = self._arrays
        other = np.where(has_j[:, None], P[j], anc)
        return P[i] - other

    def value(self, x):
        x = _as_point(self, x)
        if not self.terms:
            return 0.0
        u = self._diffs(x.reshape(-1, 2))
        r = self._arrays[4] - np.einsum("ij,ij->i", u, u)
        return float(r @ r)

    def grad(self, x):
        x = _as_point(self, x)
        G = np.zeros((self.dim // 2, 2))
        if self.terms:
            i, has_j, j, _, d2 = self._arrays
            u = self._diffs(x.reshape(-1, 2))
            r = d2 - np.einsum("ij,ij->i", u, u)
            gu = -4.0 * r[:, None] * u
            np.add.at(G, i, gu)
            np.add.at(G, j[has_j], -gu[has_j])
        return G.reshape(-1)

    def hess(self, x):
        x = _as_point(self, x)
        H = np.zeros((self.dim, self.dim))
        for t in self.terms:
            pi = x[2 * t.i:2 * t.i + 2]
            pj = x[2 * t.j:2 * t.j + 2] if t.j is not None else np.asarray(t.anchor)
            u = pi - pj
            r = t.d2 - u @ u
            h = -4.0 * r * np.eye(2) + 8.0 * np.outer(u, u)
            si = slice(2 * t.i, 2 * t.i + 2)
            H[si, si] += h
            if t.j is not None:
                sj = slice(2 * t.j, 2 * t.j + 2)
                H[sj, sj] += h
                H[si, sj] -= h
                H[sj, si] -= h
        return H

    def value_batch(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        if not self.terms:
            return np.zeros(X.shape[0])
        i, has_j, j, anc, d2 = self._arrays
        P = X.reshape(X.shape[0], -1, 2)
        other = np.where(has_j[None, :, None], P[:, j], anc[None])
        u = P[:, i] - other
        r = d2[None] - np.einsum("nij,nij->ni", u, u)
        return np.einsum("ni,ni->n", r, r)

    def to_spec(self):
        out = []
        for t in self.terms:
            e = {"i": t.i, "d2": t.d2}
            if t.j is not None:
                e["j"] = t.j
            else:
                e["anchor"] = list(t.anchor)
            out.append(e)
        return {"kind": self.kind, "dim": self.dim, "terms": out}


@dataclass(frozen=True, eq=False)
class SumBlock(ObjectiveBlock):
    """``sum_k part_k(x[index_k])``. Index maps may overlap."""

    dim: int
    parts: tuple = ()
    kind = "sum"

    def __post_init__(self):
        parts = []
        for k, (blk, idx) in enumerate(self.parts):
            idx = np.asarray(idx, dtype=int).reshape(-1)
            idx.setflags(write=False)
            if idx.shape[0] != blk.dim:
                raise UsageError(f"sum part {k}: index map has {idx.shape[0]} entries, "
                                 f"block dimension is {blk.dim}")
            if idx.size and (idx.min() < 0 or idx.max() >= self.dim):
                raise UsageError(f"sum part {k}: index outside 0..{self.dim - 1}")
            parts.append((blk, idx))
        object.__setattr__(self, "parts", tuple(parts))

    def value(self, x):
        x = _as_point(self, x)
        return float(sum(b.value(x[idx]) for b, idx in self.parts))

    def grad(self, x):
        x = _as_point(self, x)
        g = np.zeros(self.dim)
        for b, idx in self.parts:
            np.add.at(g, idx, b.grad(x[idx]))
        return g

    def hess(self, x):
        x = _as_point(self, x)
        H = np.zeros((self.dim, self.dim))
        for b, idx in self.parts:
            H[np.ix_(idx, idx)] += b.hess(x[idx])
        return H

    def value_batch(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        out = np.zeros(X.shape[0])
        for b, idx in self.parts:
            out += b.value_batch(X[:, idx])
        return out

    def lipschitz_derivative(self):
        total = 0.0
        for b, _ in self.parts:
            L = b.lipschitz_derivative()
            if L is None:
                return None
            total += L
        return total

    def to_spec(self):
        return {"kind": self.kind, "dim": self.dim,
                "parts": [{"block": b.to_spec(), "index": idx.tolist()} for b, idx in self.parts]}


# --------------------------------------------------------------------------
# spec parsing

def _req(spec, key, path):
    if key not in spec:
        raise SpecError(f"missing required field '{key}'", path)
    return spec[key]


def _floats(v, path, ndim=1):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise SpecError("expected numeric array", path) from None
    if a.ndim != ndim:
        raise SpecError(f"expected a {ndim}-D array, got {a.ndim}-D", path)
    if not np.all(np.isfinite(a)):
        raise SpecError("non-finite entry", path)
    return a


def block_from_spec(spec, path="block") -> ObjectiveBlock:
    """Build a block from its JSON dictionary."""
    if not isinstance(spec, dict):
        raise SpecError("block spec must be an object", path)
    kind = _req(spec, "kind", path)
    try:
        if kind == "zero":
            return Zero(int(spec.get("dim", 1)))
        if kind == "quadratic":
            Q = _floats(_req(spec, "Q", path), f"{path}.Q", ndim=2)
            q = _floats(spec["q"], f"{path}.q") if "q" in spec else None
            return Quadratic(Q, q, float(spec.get("const", 0.0)))
        if kind == "polynomial-1d":
            return Polynomial1D(_floats(_req(spec, "coefficients", path), f"{path}.coefficients"))
        if kind == "cosine-1d":
            return Cosine1D(float(spec.get("amplitude", 1.0)), float(spec.get("phase", 0.0)))
        if kind == "negative-square-1d":
            return NegativeSquare1D()
        if kind == "huber":
            dim = int(spec.get("dim", 1))
            center = _floats(spec["center"], f"{path}.center") if "center" in spec else None
            return Huber(float(_req(spec, "delta", path)), dim, center)
        if kind == "range-residual":
            terms = []
            for k, t in enumerate(_req(spec, "terms", path)):
                tp = f"{path}.terms[{k}]"
                terms.append(RangeTerm(int(_req(t, "i", tp)), float(_req(t, "d2", tp)),
                                       j=t.get("j"), anchor=t.get("anchor")))
            return RangeResidual(int(_req(spec, "dim", path)), tuple(terms))
        if kind == "sum":
            parts = []
            for k, part in enumerate(_req(spec, "parts", path)):
                pp = f"{path}.parts[{k}]"
                parts.append((block_from_spec(_req(part, "block", pp), f"{pp}.block"),
                              _req(part, "index", pp)))
            return SumBlock(int(_req(spec, "dim", path)), tuple(parts))
    except SpecError:
        raise
    except (UsageError, TypeError, ValueError) as exc:
        raise SpecError(str(exc), path) from None
    raise SpecError(f"unknown block kind '{kind}'", f"{path}.kind")


_SHORT = {
    "cos": lambda args: Cosine1D(*(args or [1.0])),
    "sin": lambda args: Cosine1D(args[0] if args else 1.0, -math.pi / 2),
    "negsq": lambda args: NegativeSquare1D(),
    "quad": lambda args: Quadratic([[args[0] if args else 1.0]],
                                   [args[1] if len(args) > 1 else 0.0],
                                   args[2] if len(args) > 2 else 0.0),
    "poly": lambda args: Polynomial1D(args),
    "huber": lambda args: Huber(args[0] if args else 1.0, 1,
                                [args[1]] if len(args) > 1 else None),
    "zero": lambda args: Zero(1),
}


def scalar_block(text: str) -> ObjectiveBlock:
    """Parse the CLI shorthand ``kind[:p1,p2,...]`` into a 1-D block.

    ``cos[:amp[,phase]]``, ``sin[:amp]``, ``negsq``, ``quad:a[,b[,c]]``
    (``a x^2 + b x + c``), ``poly:c0,c1,...``, ``huber:delta[,center]``,
    ``zero``.
    """
    name, _, rest = text.partition(":")
    if name not in _SHORT:
        raise UsageError(f"unknown scalar block '{name}' (choose from {', '.join(sorted(_SHORT))})")
    try:
        args = [float(a) for a in rest.split(",")] if rest else []
    except ValueError:
        raise UsageError(f"bad parameters in '{text}'") from None
    return _SHORT[name](args)
