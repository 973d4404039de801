"""Assumption validation for the convergence results.

Structural facts (zero blocks, identity matrices, ranks, set forms) are
decided exactly. Analytic facts such as a bounded gradient are only probed
on quasi-random points in a box; such checks carry ``kind="sampled"`` and
the note "sampled, not proven".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .blocks import Cosine1D, Huber, Zero
from .errors import UsageError
from .fon import check_fon
from .problem import StructuredProblem
from .sets import Ball, Box, IntervalUnion, WholeSpace

__all__ = ["Check", "AssumptionReport", "validate_assumptions", "PROFILES", "full_column_rank"]

PROFILES = ("prop1-unconstrained", "prop2-constrained", "prop3-admm", "corollary2-scalar")
SAMPLED = "sampled, not proven"
N_SAMPLES = 10_000


@dataclass(frozen=True)
class Check:
    name: str
    passed: Optional[bool]          # None: not decidable here
    kind: str = "exact"             # "exact" or "sampled"
    detail: str = ""
    value: Optional[float] = None

    def to_dict(self):
        d = {"name": self.name, "passed": self.passed, "kind": self.kind, "detail": self.detail}
        if self.value is not None:
            d["value"] = self.value
        return d


@dataclass(frozen=True)
class AssumptionReport:
    profile: str
    checks: tuple = field(default_factory=tuple)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def structural_passed(self) -> bool:
        return all(c.passed is not False for c in self.checks if c.kind == "exact")

    @property
    def passed(self) -> bool:
        """No check failed (undecided checks do not count against)."""
        return all(c.passed is not False for c in self.checks)

    def to_dict(self):
        return {"profile": self.profile, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks]}


def full_column_rank(M) -> bool:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] < M.shape[1]:
        return False
    s = np.linalg.svd(M, compute_uv=False)
    tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    return bool(s.size == M.shape[1] and s[-1] > tol)


def _is_identity(M):
    return M.shape[0] == M.shape[1] and np.array_equal(M, np.eye(M.shape[0]))


def _samples(dim, box, seed):
    lo, hi = box
    pts = qmc.Halton(d=dim, scramble=True, seed=seed).random(N_SAMPLES)
    return qmc.scale(pts, np.full(dim, lo), np.full(dim, hi)) if lo < hi else np.full((N_SAMPLES, dim), lo)


def _grad_norms(block, X):
    return np.array([np.linalg.norm(block.grad(x)) for x in X])


def _known_gradient_bound(block):
    if isinstance(block, Zero):
        return 0.0
    if isinstance(block, Huber):
        return block.delta * np.sqrt(block.dim)
    if isinstance(block, Cosine1D):
        return abs(block.amplitude)
    return None


def _bounded_gradient(p, box, seed):
    known = _known_gradient_bound(p.f)
    if known is not None:
        return Check("2a-bounded-gradient", True, "exact",
                     f"analytic bound ||grad f|| <= {known:.6g}", known)
    lo, hi = box
    inner = _grad_norms(p.f, _samples(p.p1, box, seed))
    outer = _grad_norms(p.f, _samples(p.p1, (10 * lo, 10 * hi), seed + 1))
    M = float(inner.max())
    ok = float(outer.max()) <= 1.01 * M + 1e-12
    return Check("2a-bounded-gradient", ok, "sampled",
                 f"{SAMPLED}: max ||grad f|| {M:.6g} on the box, {outer.max():.6g} on 10x box", M)


def _sign_conditions(p, box, seed):
    B = p.B
    nB = float(np.linalg.norm(B, np.inf))
    try:
        nP = float(np.linalg.norm(np.linalg.pinv(B), np.inf))
    except np.linalg.LinAlgError:
        nP = np.inf
    norms_ok = nB <= 1 + 1e-12 and nP <= 1 + 1e-12
    lo, hi = box
    cval = 0.5 * max(abs(lo), abs(hi))
    X = _samples(p.p1, box, seed + 2)
    G = np.array([p.f.grad(x) for x in X])
    bad_low = np.any((X < -cval) & ~(G < 0))
    bad_high = np.any((X > cval) & ~(G > 0))
    signs_ok = not (bad_low or bad_high)
    return [
        Check("2b-infinity-norms", norms_ok, "exact",
              f"||B||_inf = {nB:.6g}, ||(B'B)^-1 B'||_inf = {nP:.6g}"),
        Check("2b-sign-conditions", signs_ok, "sampled",
              f"{SAMPLED}: gradient signs outside |x_i| > {cval:.6g}", cval),
    ]


def _slater(s):
    if isinstance(s, WholeSpace):
        return True
    if isinstance(s, Box):
        return bool(np.all(s.lower < s.upper))
    if isinstance(s, Ball):
        return s.radius > 0
    if isinstance(s, IntervalUnion):
        return all(a < b for a, b in s.intervals)
    return None


def _prop1(p, box, seed):
    checks = [
        Check("g-zero", isinstance(p.g, Zero), detail=f"g is {p.g.kind}"),
        Check("A-identity", _is_identity(p.A)),
        Check("c-zero", bool(np.all(p.c == 0))),
        Check("B-full-column-rank", full_column_rank(p.B)),
        Check("unconstrained", isinstance(p.X, WholeSpace) and isinstance(p.Z, WholeSpace),
              detail=f"X is {p.X.form}, Z is {p.Z.form}"),
    ]
    a = _bounded_gradient(p, box, seed)
    b = _sign_conditions(p, box, seed)
    either = a.passed or all(c.passed for c in b)
    checks += [a, *b, Check("assumption-2", bool(either), "sampled",
                            f"{SAMPLED}: 2a or 2b holds")]
    return checks


def _prop2(p):
    checks = [Check("differentiable", True, detail="all builtin blocks are smooth except huber's C1 kink")]
    for name, s in (("X", p.X), ("Z", p.Z)):
        conv = s.is_convex
        checks.append(Check(f"{name}-convex", conv, detail=f"{name} is {s.form}"))
        checks.append(Check(f"{name}-compact", s.is_compact, detail=f"{name} is {s.form}"))
        checks.append(Check(f"{name}-slater", _slater(s)))
    checks.append(Check("A-full-column-rank", full_column_rank(p.A)))
    checks.append(Check("B-full-column-rank", full_column_rank(p.B)))
    return checks


def _prop3(p, point):
    checks = [
        Check("sets-functional", True, detail="every set form reports smooth constraints"),
        Check("differentiable", True),
    ]
    if point is None:
        checks.append(Check("regularity", None, detail="no point supplied"))
    else:
        cert = check_fon(p, point, tol=1e-8)
        checks.append(Check("regularity", not cert.regularity_violated,
                            detail="active constraint gradients at the supplied point"))
    return checks


def _scalar_checks(p, rho):
    scalar = p.p1 == 1 and p.p2 == 1 and p.q == 1
    coupling = scalar and p.A[0, 0] == 1 and p.B[0, 0] == -1 and p.c[0] == 0
    Lf, Lg = p.f.lipschitz_derivative(), p.g.lipschitz_derivative()
    L = None if Lf is None or Lg is None else max(Lf, Lg)
    checks = [
        Check("scalar", scalar),
        Check("unconstrained", isinstance(p.X, WholeSpace) and isinstance(p.Z, WholeSpace)),
        Check("coupling-x-equals-z", coupling),
        Check("lipschitz-derivatives", L is not None,
              detail="L = max of the two blocks' derivative Lipschitz constants", value=L),
    ]
    if rho is not None:
        checks.append(Check("rho-above-L", L is not None and rho > L, value=float(rho)))
    return checks


def validate_assumptions(p: StructuredProblem, profile: str, box=(-10.0, 10.0),
                         point=None, rho=None, seed=0) -> AssumptionReport:
    """Check the hypotheses of one convergence result.

    Parameters
    ----------
    profile : str
        One of ``PROFILES``.
    box : (float, float)
        Sampling box ``[lo, hi]^dim`` for analytic checks.
    point : PrimalDualPoint, optional
        Where to test constraint regularity (``prop3-admm``).
    rho : float, optional
        Penalty to compare against ``L`` (``corollary2-scalar``).
    """
    if profile == "prop1-unconstrained":
        checks = _prop1(p, box, seed)
    elif profile == "prop2-constrained":
        checks = _prop2(p)
    elif profile == "prop3-admm":
        checks = _prop3(p, point)
    elif profile == "corollary2-scalar":
        checks = _scalar_checks(p, rho)
    else:
        raise UsageError(f"unknown profile '{profile}' (choose from {', '.join(PROFILES)})")
    return AssumptionReport(profile, tuple(checks))
