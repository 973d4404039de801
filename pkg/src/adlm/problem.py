"""The structured problem ``min f(x) + g(z)  s.t.  Ax + Bz = c, x in X, z in Z``
and its augmented Lagrangian."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from .blocks import ObjectiveBlock, block_from_spec
from .errors import SpecError, UsageError
from .sets import ConstraintSet, WholeSpace, set_from_spec

__all__ = [
    "StructuredProblem",
    "PrimalDualPoint",
    "eval_objective",
    "eval_aug_lagrangian",
    "eval_primal_residual",
    "coupling_residual",
    "grad_aug_lagrangian",
    "problem_from_spec",
    "problem_to_spec",
    "load_problem",
]


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if ndim == 2:
        a = np.atleast_2d(a)
    else:
        a = a.reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StructuredProblem:
    f: ObjectiveBlock
    g: ObjectiveBlock
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    X: ConstraintSet = None
    Z: ConstraintSet = None

    def __post_init__(self):
        A, B, c = _frozen(self.A, 2), _frozen(self.B, 2), _frozen(self.c, 1)
        X = self.X if self.X is not None else WholeSpace(self.f.dim)
        Z = self.Z if self.Z is not None else WholeSpace(self.g.dim)
        q = c.shape[0]
        problems = []
        if A.shape != (q, self.f.dim):
            problems.append(f"A is {A.shape[0]}x{A.shape[1]}, expected {q}x{self.f.dim}")
        if B.shape != (q, self.g.dim):
            problems.append(f"B is {B.shape[0]}x{B.shape[1]}, expected {q}x{self.g.dim}")
        if X.dim != self.f.dim:
            problems.append(f"X has dimension {X.dim}, f has {self.f.dim}")
        if Z.dim != self.g.dim:
            problems.append(f"Z has dimension {Z.dim}, g has {self.g.dim}")
        if problems:
            raise UsageError("inconsistent problem dimensions: " + "; ".join(problems))
        for name, val in (("A", A), ("B", B), ("c", c), ("X", X), ("Z", Z)):
            object.__setattr__(self, name, val)

    @property
    def p1(self):
        return self.f.dim

    @property
    def p2(self):
        return self.g.dim

    @property
    def q(self):
        return self.c.shape[0]

    def point(self, x, z, y=None, rho=1.0):
        return PrimalDualPoint(x, z, np.zeros(self.q) if y is None else y, rho)


@dataclass(frozen=True, eq=False)
class PrimalDualPoint:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        for name in ("x", "z", "y"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 1))
        if not self.rho > 0:
            raise UsageError(f"penalty parameter must be positive, got {self.rho}")
        object.__setattr__(self, "rho", float(self.rho))


def _check_xz(p, x, z):
    x = np.asarray(x, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    if x.shape[0] != p.p1 or z.shape[0] != p.p2:
        raise UsageError(f"expected x of length {p.p1} and z of length {p.p2}, "
                         f"got {x.shape[0]} and {z.shape[0]}")
    return x, z


def _check_pt(p, pt):
    x, z = _check_xz(p, pt.x, pt.z)
    if pt.y.shape[0] != p.q:
        raise UsageError(f"expected y of length {p.q}, got {pt.y.shape[0]}")
    if not pt.rho > 0:
        raise UsageError("penalty parameter must be positive")
    return x, z, pt.y


def coupling_residual(p: StructuredProblem, x, z) -> np.ndarray:
    """``Ax + Bz - c`` as a vector."""
    x, z = _check_xz(p, x, z)
    return p.A @ x + p.B @ z - p.c


def eval_objective(p: StructuredProblem, x, z) -> float:
    x, z = _check_xz(p, x, z)
    return p.f.value(x) + p.g.value(z)


def eval_primal_residual(p: StructuredProblem, x, z) -> float:
    return float(np.linalg.norm(coupling_residual(p, x, z)))


def eval_aug_lagrangian(p: StructuredProblem, pt: PrimalDualPoint) -> float:
    x, z, y = _check_pt(p, pt)
    r = p.A @ x + p.B @ z - p.c
    return p.f.value(x) + p.g.value(z) + float(y @ r) + 0.5 * pt.rho * float(r @ r)


def grad_aug_lagrangian(p: StructuredProblem, pt: PrimalDualPoint, block: str) -> np.ndarray:
    """Gradient of the augmented Lagrangian with respect to ``x`` or ``z``."""
    x, z, y = _check_pt(p, pt)
    r = p.A @ x + p.B @ z - p.c
    if block == "x":
        return p.f.grad(x) + p.A.T @ (y + pt.rho * r)
    if block == "z":
        return p.g.grad(z) + p.B.T @ (y + pt.rho * r)
    raise UsageError(f"block must be 'x' or 'z', got {block!r}")


# --------------------------------------------------------------------------
# JSON problem specs

def _matrix(spec, key, rows, cols, path):
    if key not in spec:
        raise SpecError(f"missing required field '{key}'", path)
    v = spec[key]
    if isinstance(v, str):
        if rows != cols:
            raise SpecError(f"'{v}' needs a square matrix but the shape is {rows}x{cols}",
                            f"{path}.{key}")
        if v == "identity":
            return np.eye(rows)
        if v == "neg-identity":
            return -np.eye(rows)
        raise SpecError(f"unknown matrix keyword '{v}'", f"{path}.{key}")
    try:
        M = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise SpecError("expected a numeric row-major array", f"{path}.{key}") from None
    if M.ndim == 1 and cols == 1:
        M = M.reshape(-1, 1)
    if M.shape != (rows, cols):
        raise SpecError(f"expected shape {rows}x{cols}, got {'x'.join(map(str, M.shape))}",
                        f"{path}.{key}")
    return M


def problem_from_spec(spec: dict, path="problem") -> StructuredProblem:
    """Build a problem from the dictionary form of a problem-spec file."""
    if not isinstance(spec, dict):
        raise SpecError("problem spec must be an object", path)
    for key in ("f", "g", "c"):
        if key not in spec:
            raise SpecError(f"missing required field '{key}'", path)
    f = block_from_spec(spec["f"], "f")
    g = block_from_spec(spec["g"], "g")
    try:
        c = np.array(spec["c"], dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise SpecError("expected a numeric array", "c") from None
    A = _matrix(spec, "A", c.shape[0], f.dim, path="problem")
    B = _matrix(spec, "B", c.shape[0], g.dim, path="problem")
    X = set_from_spec(spec["X"], "X") if "X" in spec else WholeSpace(f.dim)
    Z = set_from_spec(spec["Z"], "Z") if "Z" in spec else WholeSpace(g.dim)
    try:
        return StructuredProblem(f, g, A, B, c, X, Z)
    except UsageError as exc:
        raise SpecError(str(exc), path) from None


def problem_to_spec(p: StructuredProblem) -> dict:
    return {"f": p.f.to_spec(), "g": p.g.to_spec(), "A": p.A.tolist(), "B": p.B.tolist(),
            "c": p.c.tolist(), "X": p.X.to_spec(), "Z": p.Z.to_spec()}


def load_problem(source: Union[str, dict]) -> StructuredProblem:
    """Load a problem from a JSON file path (or an already-parsed dict).

    JSON syntax errors are reported with their line and column.
    """
    if isinstance(source, dict):
        return problem_from_spec(source)
    with open(source) as fh:
        text = fh.read()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return problem_from_spec(spec)
