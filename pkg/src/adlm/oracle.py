"""Fixed-point oracle for scalar ADMM.

For ``min f(x) + g(z)`` s.t. ``x = z`` with L-Lipschitz derivatives,
``rho > L`` and ``y0 = g'(z0)``, ADMM moves ``z`` monotonically from ``z0``
in the direction in which ``f + g`` decreases and stops at the first zero
of ``s = f' + g'`` it meets; with no such zero it runs off to infinity.
:func:`predict_fixed_point` computes that point by a directed scan and
:func:`verify_prediction` checks it against an actual run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .algorithms import IterationTrace, StopRule, run_admm
from .blocks import ObjectiveBlock
from .errors import UsageError
from .instances import scalar_consensus
from .subsolvers import SolverPolicy, scalar_derivatives

__all__ = ["ScalarInstance", "FixedPointPrediction", "AgreementReport",
           "predict_fixed_point", "verify_prediction", "ZERO_TOL"]

ZERO_TOL = 1e-12
TOUCH_TOL = 1e-12
TOUCH_FILTER = 1e-4
CHUNK = 65_536


@dataclass(frozen=True, eq=False)
class ScalarInstance:
    """A scalar ADMM instance; ``L`` defaults to the larger of the two
    blocks' derivative Lipschitz constants."""

    f: ObjectiveBlock
    g: ObjectiveBlock
    z0: float
    rho: float
    L: Optional[float] = None

    def __post_init__(self):
        if self.f.dim != 1 or self.g.dim != 1:
            raise UsageError("scalar instances need 1-D blocks")
        if self.L is None:
            Lf, Lg = self.f.lipschitz_derivative(), self.g.lipschitz_derivative()
            if Lf is None or Lg is None:
                raise UsageError("a block has no known derivative Lipschitz constant; pass L")
            object.__setattr__(self, "L", float(max(Lf, Lg)))
        if not self.rho > self.L:
            raise UsageError(f"rho = {self.rho} must exceed L = {self.L}")
        object.__setattr__(self, "z0", float(self.z0))
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def fprime(self):
        return scalar_derivatives(self.f)[0]

    @property
    def gprime(self):
        return scalar_derivatives(self.g)[0]

    def s(self, z):
        z = np.asarray(z, dtype=float)
        return self.fprime(z) + self.gprime(z)

    def s_prime(self, z):
        z = np.asarray(z, dtype=float)
        return scalar_derivatives(self.f)[1](z) + scalar_derivatives(self.g)[1](z)

    @property
    def y0(self) -> float:
        return float(self.gprime(np.float64(self.z0)))


@dataclass(frozen=True)
class FixedPointPrediction:
    case: str                       # "a", "b" or "c"
    zstar: float                    # may be +inf / -inf
    certificate: Optional[float]    # s(z*) when finite
    tangent: bool = False           # s touches zero at z* without changing sign

    @property
    def finite(self):
        return math.isfinite(self.zstar)

    def to_dict(self):
        z = self.zstar if self.finite else ("+inf" if self.zstar > 0 else "-inf")
        return {"case": self.case, "zstar": z, "certificate": self.certificate,
                "tangent": self.tangent}


def _bisect(s, lo, hi):
    """Zero of ``s`` between ``lo`` and ``hi`` (opposite signs), to machine
    resolution."""
    slo = float(s(lo))
    while True:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        sm = float(s(mid))
        if sm == 0.0:
            return mid
        if (sm < 0) == (slo < 0):
            lo, slo = mid, sm
        else:
            hi = mid
    return lo if abs(float(s(lo))) <= abs(float(s(hi))) else hi


def _touch(inst, lo, hi, scale):
    """Point in ``[lo, hi]`` where ``|s|`` has a local minimum, if ``s`` is
    zero there to within round-off; else ``None``."""
    d2 = lambda t: float(inst.s_prime(np.float64(t)))
    if (d2(lo) < 0) != (d2(hi) < 0):
        t = _bisect(d2, lo, hi)
    else:
        t = minimize_scalar(lambda u: abs(float(inst.s(u))), bounds=(lo, hi), method="bounded",
                            options={"xatol": 1e-15}).x
    return float(t) if abs(float(inst.s(t))) <= TOUCH_TOL * scale else None


def predict_fixed_point(inst: ScalarInstance, scan_bound: float = 1e3,
                        scan_step: float = 1e-3) -> FixedPointPrediction:
    """Predict the ADMM limit of ``z``.

    Scans from ``z0`` in steps of ``scan_step`` up to ``scan_bound`` away,
    toward decreasing ``f + g``, and stops at the first zero of ``s``: a grid
    value with ``|s| <= 1e-12``, a sign change (refined by bisection) or a
    touching zero, where ``|s|`` has a small local minimum that refines to
    zero. Touching zeros narrower than the grid can still be missed.
    """
    if not scan_step > 0 or not scan_bound > 0:
        raise UsageError("scan_bound and scan_step must be positive")
    z0 = inst.z0
    s0 = float(inst.s(z0))
    if abs(s0) <= ZERO_TOL:
        return FixedPointPrediction("a", z0, s0, _is_tangent(inst, z0))
    direction = 1.0 if s0 < 0 else -1.0
    case = "b" if s0 < 0 else "c"
    n_total = int(math.ceil(scan_bound / scan_step))
    prev = (z0, abs(s0))
    k = 1
    while k <= n_total:
        ks = np.arange(k, min(k + CHUNK, n_total + 1), dtype=float)
        zs = z0 + direction * ks * scan_step
        sv = inst.s(zs)
        a = np.abs(sv)
        # reached a zero or crossed to the other sign
        cross = np.nonzero((a <= ZERO_TOL) | (np.sign(sv) != np.sign(s0)))[0]
        stop = int(cross[0]) if cross.size else zs.size
        # candidate touching zeros before the first crossing
        left = np.concatenate([[prev[1]], a[:-1]])
        right = np.concatenate([a[1:], [np.inf]])
        scale = 1.0 + float(np.max(a[:stop])) if stop else 1.0
        cand = np.nonzero((a <= left) & (a <= right) & (a <= TOUCH_FILTER * scale))[0]
        cand = cand[cand < stop]
        for i in cand:
            lo = float(zs[i - 1]) if i > 0 else prev[0]
            hi = float(zs[i + 1]) if i + 1 < zs.size else float(zs[i]) + direction * scan_step
            t = _touch(inst, min(lo, hi), max(lo, hi), 1.0)
            if t is not None:
                return FixedPointPrediction(case, t, float(inst.s(t)), True)
        if cross.size:
            i = stop
            zi = float(zs[i])
            if a[i] <= ZERO_TOL:
                zstar = zi
                if _is_tangent(inst, zi):
                    lo = float(zs[i - 1]) if i > 0 else prev[0]
                    t = _touch(inst, min(lo, zi + direction * scan_step),
                               max(lo, zi + direction * scan_step), 1.0)
                    zstar = zi if t is None else t
            else:
                lo = float(zs[i - 1]) if i > 0 else prev[0]
                zstar = _bisect(inst.s, lo, zi)
            return FixedPointPrediction(case, zstar, float(inst.s(zstar)), _is_tangent(inst, zstar))
        prev = (float(zs[-1]), float(a[-1]))
        k += ks.size
    return FixedPointPrediction(case, direction * math.inf, None)


def _is_tangent(inst, z):
    return abs(float(inst.s_prime(np.float64(z)))) <= 1e-5


@dataclass(frozen=True, eq=False)
class AgreementReport:
    agree: bool
    prediction: FixedPointPrediction
    verdict: str
    iterations: int
    z_final: float
    y_final: float
    detail: str = ""
    trace: Optional[IterationTrace] = field(default=None, repr=False)
    flagged: bool = False

    def to_dict(self):
        return {"agree": self.agree, "flagged": self.flagged,
                "prediction": self.prediction.to_dict(),
                "verdict": self.verdict, "iterations": self.iterations,
                "z_final": self.z_final, "y_final": self.y_final, "detail": self.detail}


DEFAULT_VERIFY_STOP = StopRule(max_iters=500, primal_tol=1e-10, step_tol=1e-11)


def verify_prediction(inst: ScalarInstance, pred: FixedPointPrediction,
                      stop: StopRule = DEFAULT_VERIFY_STOP, tol: float = 1e-5) -> AgreementReport:
    """Run ADMM with scalar-exact subsolves from ``(z0, g'(z0))`` and compare.

    A miss at a tangent zero is ``flagged``: there the iterates approach
    ``z*`` only sublinearly and may not reach ``tol`` within the budget.
    """
    p = scalar_consensus(inst.f, inst.g)
    tr = run_admm(p, inst.rho, ([inst.z0], [inst.y0]), SolverPolicy("scalar-exact"), stop)
    zf, yf = float(tr.final.z[0]), float(tr.final.y[0])
    if pred.finite:
        gz = float(inst.gprime(np.float64(pred.zstar)))
        ok = tr.verdict != "diverged" and abs(zf - pred.zstar) <= tol and abs(yf - gz) <= tol
        detail = f"|z - z*| = {abs(zf - pred.zstar):.3g}, |y - g'(z*)| = {abs(yf - gz):.3g}"
    else:
        ok = tr.verdict == "diverged" and math.copysign(1.0, zf) == math.copysign(1.0, pred.zstar)
        detail = f"run verdict {tr.verdict}, final z {zf:.6g}"
    flagged = not ok and pred.tangent
    if flagged:
        detail += "; tangent zero, sublinear approach"
    return AgreementReport(bool(ok), pred, tr.verdict, tr.iterations, zf, yf, detail, tr, flagged)
