"""Outer loops: alternating penalty (ADPM), ADMM and two joint-update
baselines (quadratic penalty, method of multipliers).

All runners return an immutable :class:`IterationTrace`. Record ``t = 0``
holds the initial point; record ``t >= 1`` holds the iterate produced with
penalty ``rho(t-1)``, which is the value stored in its ``rho`` field.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blocks import Quadratic, SumBlock, Zero
from .errors import UsageError
from .fon import FonCertificate, check_fon, recover_block_multipliers
from .problem import PrimalDualPoint, StructuredProblem
from .sets import ProductSet, WholeSpace
from .subsolvers import (SolverPolicy, SubproblemSpec, solve_block, x_subproblem,
                         z_subproblem)

__all__ = [
    "PenaltySchedule",
    "DualPolicy",
    "StopRule",
    "IterationRecord",
    "IterationTrace",
    "run_adpm",
    "run_admm",
    "run_quadratic_penalty",
    "run_method_of_multipliers",
    "diagnose_trace",
    "stationarity_norm",
    "DUAL_WINDOW",
]

DUAL_WINDOW = 20
JOINT_SWEEPS = 100


@dataclass(frozen=True)
class PenaltySchedule:
    """``rho(t)``: constant, linear ``rho0 + slope*t`` or geometric
    ``rho0 * delta**floor(t / kappa)``."""

    kind: str
    rho0: float
    slope: float = 0.0
    delta: float = 1.0
    kappa: int = 1

    def __post_init__(self):
        if not self.rho0 > 0:
            raise UsageError("rho0 must be positive")
        if self.kind == "linear" and not self.slope > 0:
            raise UsageError("linear schedule needs a positive slope")
        if self.kind == "geometric" and not (self.delta > 1 and self.kappa >= 1
                                             and int(self.kappa) == self.kappa):
            raise UsageError("geometric schedule needs delta > 1 and integer kappa >= 1")
        if self.kind not in ("constant", "linear", "geometric"):
            raise UsageError(f"unknown schedule kind '{self.kind}'")

    @classmethod
    def constant(cls, rho):
        return cls("constant", float(rho))

    @classmethod
    def linear(cls, rho0=1.0, slope=1.0):
        return cls("linear", float(rho0), slope=float(slope))

    @classmethod
    def geometric(cls, rho0=1.0, delta=2.0, kappa=1):
        return cls("geometric", float(rho0), delta=float(delta), kappa=int(kappa))

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.rho0
        if self.kind == "linear":
            return self.rho0 + self.slope * t
        return self.rho0 * self.delta ** (t // self.kappa)

    @property
    def regime(self):
        if self.kind == "geometric":
            return "geometric growth: constrained feasibility guarantee applies"
        if self.kind == "linear":
            return "divergent, 1/rho non-summable: unconstrained guarantee only"
        return "constant penalty"

    def to_dict(self):
        d = {"kind": self.kind, "rho0": self.rho0}
        if self.kind == "linear":
            d["slope"] = self.slope
        if self.kind == "geometric":
            d.update(delta=self.delta, kappa=self.kappa)
        return d


@dataclass(frozen=True)
class DualPolicy:
    kind: str = "zero"
    M0: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("zero", "multiplier-recursion", "bounded-recursion"):
            raise UsageError(f"unknown dual policy '{self.kind}'")
        if self.kind == "bounded-recursion" and not (self.M0 is not None and self.M0 > 0):
            raise UsageError("bounded-recursion needs M0 > 0")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def multiplier(cls):
        return cls("multiplier-recursion")

    @classmethod
    def bounded(cls, M0):
        return cls("bounded-recursion", float(M0))

    def clip(self, y):
        if self.kind != "bounded-recursion":
            return y
        n = np.linalg.norm(y)
        return y if n <= self.M0 else y * (self.M0 / n)

    def to_dict(self):
        return {"kind": self.kind, "M0": self.M0}


@dataclass(frozen=True)
class StopRule:
    max_iters: int = 1000
    primal_tol: float = 1e-8
    step_tol: float = 1e-10
    divergence_bound: float = 1e6
    patience: int = 1   # consecutive iterations the convergence test must hold

    def __post_init__(self):
        if self.max_iters < 1 or self.patience < 1 \
                or min(self.primal_tol, self.step_tol, self.divergence_bound) <= 0:
            raise UsageError("stop rule fields must all be positive")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    t: int
    rho: float
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    r: float
    stationarity: float
    objective: float
    dual_step: float
    primal_step: float = 0.0
    x_status: str = ""
    z_status: str = ""
    lagrangian_before_z: float = math.nan
    lagrangian_after_z: float = math.nan


@dataclass(frozen=True, eq=False)
class IterationTrace:
    records: tuple
    verdict: str
    algo: str = ""
    annotations: dict = field(default_factory=dict)
    fon: Optional[FonCertificate] = None

    @property
    def iterations(self):
        return len(self.records) - 1

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    # ---------------------------------------------------------------- export
    def csv_text(self) -> str:
        """Trace as CSV; floats use 17 significant digits."""
        f0 = self.records[0]
        head = ["t", "rho", "r", "stationarity", "objective", "dual_step"]
        head += [f"x{i}" for i in range(f0.x.size)] + [f"z{i}" for i in range(f0.z.size)]
        head += [f"y{i}" for i in range(f0.y.size)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for r in self.records:
            row = [str(r.t)] + [fmt(v) for v in (r.rho, r.r, r.stationarity, r.objective, r.dual_step)]
            row += [fmt(v) for v in np.concatenate([r.x, r.z, r.y])]
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def summary(self) -> dict:
        fin = self.final
        return {
            "algo": self.algo,
            "verdict": self.verdict,
            "iterations": self.iterations,
            "final_r": fin.r,
            "final_objective": fin.objective,
            "final_x": fin.x.tolist(),
            "final_z": fin.z.tolist(),
            "final_y": fin.y.tolist(),
            "annotations": self.annotations,
            "fon": None if self.fon is None else self.fon.to_dict(),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def fmt(v) -> str:
    return "%.17g" % v


# --------------------------------------------------------------------------
# shared machinery

def stationarity_norm(p: StructuredProblem, x, z, y) -> float:
    """Norm of the projected-gradient mapping of the Lagrangian at ``(x, z, y)``.

    For sets without a projection the least-squares FON residual is used.
    """
    out = 0.0
    for blk, S, M, v in ((p.f, p.X, p.A, x), (p.g, p.Z, p.B, z)):
        g = blk.grad(v) + M.T @ y
        if S.special:
            s = np.linalg.norm(v - S.project(v - g))
        else:
            s = recover_block_multipliers(g, S, v, 1e-8).stationarity
        out += s * s
    return math.sqrt(out)


def _init(p, init):
    if len(init) not in (2, 3):
        raise UsageError("init must be (z0, y0) or (z0, y0, x0)")
    z0 = np.asarray(init[0], dtype=float).reshape(-1)
    y0 = np.zeros(p.q) if init[1] is None else np.asarray(init[1], dtype=float).reshape(-1)
    if len(init) == 3 and init[2] is not None:
        x0 = np.asarray(init[2], dtype=float).reshape(-1)
    else:
        x0 = p.X.project(np.zeros(p.p1)) if p.X.special else p.X._any_point()
    if z0.shape != (p.p2,) or y0.shape != (p.q,) or x0.shape != (p.p1,):
        raise UsageError(f"init shapes must be z:{p.p2}, y:{p.q}, x:{p.p1}")
    return x0, z0, y0


def _record(p, t, rho, x, z, y, y_prev, x_prev, z_prev, xs="", zs="", lb=math.nan, la=math.nan):
    r = p.A @ x + p.B @ z - p.c
    step = math.sqrt(float(np.sum((x - x_prev) ** 2) + np.sum((z - z_prev) ** 2)))
    return IterationRecord(
        t=t, rho=float(rho), x=x.copy(), z=z.copy(), y=y.copy(),
        r=float(np.linalg.norm(r)),
        stationarity=stationarity_norm(p, x, z, y),
        objective=p.f.value(x) + p.g.value(z),
        dual_step=float(np.linalg.norm(y - y_prev)),
        primal_step=step, x_status=xs, z_status=zs,
        lagrangian_before_z=lb, lagrangian_after_z=la)


def _diverged(x, z, bound):
    return (not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)))
            or np.linalg.norm(z) > bound or np.linalg.norm(x) > bound)


def _L(p, x, z, y, rho):
    r = p.A @ x + p.B @ z - p.c
    return p.f.value(x) + p.g.value(z) + float(y @ r) + 0.5 * rho * float(r @ r)


def _run_alternating(p, rho_of, dual_step_fn, init, policy, stop, algo, converged_fn, annotations):
    x, z, y = _init(p, init)
    recs = [_record(p, 0, rho_of(0), x, z, y, y, x, z)]
    verdict = "max-iters"
    streak = 0
    for t in range(stop.max_iters):
        rho = rho_of(t)
        rx = solve_block(x_subproblem(p, z, y, rho, x), policy)
        xn = rx.x
        lb = _L(p, xn, z, y, rho)
        rz = solve_block(z_subproblem(p, xn, y, rho, z), policy)
        zn = rz.x
        la = _L(p, xn, zn, y, rho)
        r = p.A @ xn + p.B @ zn - p.c
        yn = dual_step_fn(y, rho, r)
        rec = _record(p, t + 1, rho, xn, zn, yn, y, x, z, rx.status, rz.status, lb, la)
        recs.append(rec)
        x, z, y = xn, zn, yn
        if _diverged(x, z, stop.divergence_bound):
            verdict = "diverged"
            break
        streak = streak + 1 if converged_fn(rec, stop) else 0
        if streak >= stop.patience:
            verdict = "converged"
            break
    return IterationTrace(tuple(recs), verdict, algo, annotations)


def _adpm_converged(rec, stop):
    return rec.r <= stop.primal_tol and rec.primal_step <= stop.step_tol


def _admm_converged(rec, stop):
    return (rec.dual_step <= stop.step_tol and rec.r <= stop.primal_tol
            and rec.primal_step <= stop.step_tol)


def _finalize_fon(trace, p, fon_tol):
    fin = trace.final
    cert = check_fon(p, PrimalDualPoint(fin.x, fin.z, fin.y, max(fin.rho, 1e-300)), fon_tol)
    return IterationTrace(trace.records, trace.verdict, trace.algo, trace.annotations, cert)


# --------------------------------------------------------------------------
# runners

def run_adpm(p: StructuredProblem, schedule: PenaltySchedule, dual: DualPolicy, init,
             policy: SolverPolicy = SolverPolicy(), stop: StopRule = StopRule()) -> IterationTrace:
    """Alternating direction penalty method.

    Parameters
    ----------
    schedule : PenaltySchedule
        Must diverge (linear or geometric).
    dual : DualPolicy
        ``zero`` or ``bounded-recursion``; the latter takes a multiplier step
        and projects onto the ``M0``-ball.
    init : tuple
        ``(z0, y0)`` or ``(z0, y0, x0)``.
    """
    if schedule.kind == "constant":
        raise UsageError("ADPM needs a divergent penalty schedule; a constant penalty is ADMM")
    if dual.kind == "multiplier-recursion":
        raise UsageError("ADPM keeps multipliers bounded: use dual policy zero or bounded-recursion")
    z0, y0 = init[0], init[1]
    if dual.kind == "zero":
        y0 = np.zeros(p.q)
    else:
        y0 = dual.clip(np.zeros(p.q) if y0 is None else np.asarray(y0, dtype=float))
    init = (z0, y0) + tuple(init[2:])

    def dual_fn(y, rho, r):
        if dual.kind == "zero":
            return y
        return dual.clip(y + rho * r)

    ann = {"schedule": schedule.to_dict(), "dual": dual.to_dict(), "guarantee": schedule.regime}
    return _run_alternating(p, schedule, dual_fn, init, policy, stop, "adpm", _adpm_converged, ann)


def run_admm(p: StructuredProblem, rho: float, init, policy: SolverPolicy = SolverPolicy(),
             stop: StopRule = StopRule(), fon_tol: float = 1e-6) -> IterationTrace:
    """ADMM with fixed ``rho``; a FON certificate is attached on convergence."""
    if not rho > 0:
        raise UsageError("rho must be positive")
    rho = float(rho)
    ann = {"rho": rho}
    tr = _run_alternating(p, lambda t: rho, lambda y, r_, r: y + rho * r, init, policy, stop,
                          "admm", _admm_converged, ann)
    return _finalize_fon(tr, p, fon_tol) if tr.verdict == "converged" else tr


def _stacked(p):
    M = np.hstack([p.A, p.B])
    n1 = p.p1
    h = SumBlock(p.p1 + p.p2, ((p.f, np.arange(n1)), (p.g, n1 + np.arange(p.p2))))
    if isinstance(p.f, (Quadratic, Zero)) and isinstance(p.g, (Quadratic, Zero)):
        Q = np.zeros((h.dim, h.dim))
        q = np.zeros(h.dim)
        const = 0.0
        for blk, sl in ((p.f, slice(0, n1)), (p.g, slice(n1, None))):
            if isinstance(blk, Quadratic):
                Q[sl, sl] = blk.Q
                q[sl] = blk.q
                const += blk.const
        h = Quadratic(Q, q, const)
    return M, h, ProductSet((p.X, p.Z))


def _joint_solve(p, stacked, x, z, y, rho, policy):
    """``argmin_{x,z} L_rho(x, z, y)``.

    Quadratic blocks on the whole space are solved in closed form; stacked
    dimension <= 3 with special-form sets uses grid-global; anything else
    alternates block solves to stationarity (a local answer).
    """
    M, h, S = stacked
    n1 = p.p1
    whole = isinstance(p.X, WholeSpace) and isinstance(p.Z, WholeSpace)
    if isinstance(h, Quadratic) and whole:
        strategy = "closed-form"
    elif h.dim <= 3 and S.special:
        strategy = "grid-global"
    else:
        strategy = None
    if strategy is not None:
        if whole:
            S = WholeSpace(h.dim)
        v = np.concatenate([x, z])
        spec = SubproblemSpec(h, M.T @ y - rho * (M.T @ p.c), rho * (M.T @ M), S, v)
        pol = SolverPolicy(strategy, policy.tol, policy.max_inner_iters, policy.grid_points_per_dim,
                           policy.multistart_count, policy.grid_radius, policy.seed)
        res = solve_block(spec, pol)
        return res.x[:n1], res.x[n1:], res.status
    tol = policy.tol_for("projected-gradient")
    for _ in range(JOINT_SWEEPS):
        xn = solve_block(x_subproblem(p, z, y, rho, x), policy).x
        zn = solve_block(z_subproblem(p, xn, y, rho, z), policy).x
        done = np.linalg.norm(xn - x) + np.linalg.norm(zn - z) <= tol
        x, z = xn, zn
        if done:
            break
    return x, z, "local"


def _run_joint(p, rho_of, dual_fn, init, policy, stop, algo, converged_fn, annotations):
    x, z, y = _init(p, init)
    stacked = _stacked(p)
    recs = [_record(p, 0, rho_of(0), x, z, y, y, x, z)]
    verdict = "max-iters"
    streak = 0
    for t in range(stop.max_iters):
        rho = rho_of(t)
        xn, zn, status = _joint_solve(p, stacked, x, z, y, rho, policy)
        r = p.A @ xn + p.B @ zn - p.c
        yn = dual_fn(y, rho, r)
        rec = _record(p, t + 1, rho, xn, zn, yn, y, x, z, status, status)
        recs.append(rec)
        x, z, y = xn, zn, yn
        if _diverged(x, z, stop.divergence_bound):
            verdict = "diverged"
            break
        streak = streak + 1 if converged_fn(rec, stop) else 0
        if streak >= stop.patience:
            verdict = "converged"
            break
    return IterationTrace(tuple(recs), verdict, algo, annotations)


def run_quadratic_penalty(p: StructuredProblem, schedule: PenaltySchedule, init,
                          policy: SolverPolicy = SolverPolicy(),
                          stop: StopRule = StopRule()) -> IterationTrace:
    """Quadratic penalty method: joint ``(x, z)`` minimization, ``y`` held at ``y0``."""
    if schedule.kind == "constant":
        raise UsageError("the penalty method needs a divergent schedule")
    ann = {"schedule": schedule.to_dict(), "guarantee": schedule.regime}
    return _run_joint(p, schedule, lambda y, rho, r: y, init, policy, stop, "qpm",
                      _adpm_converged, ann)


def run_method_of_multipliers(p: StructuredProblem, rho: float, init,
                              policy: SolverPolicy = SolverPolicy(), stop: StopRule = StopRule(),
                              fon_tol: float = 1e-6) -> IterationTrace:
    """Method of multipliers: joint minimization plus ``y += rho r``."""
    if not rho > 0:
        raise UsageError("rho must be positive")
    rho = float(rho)
    tr = _run_joint(p, lambda t: rho, lambda y, r_, r: y + rho * r, init, policy, stop, "mm",
                    _admm_converged, {"rho": rho})
    return _finalize_fon(tr, p, fon_tol) if tr.verdict == "converged" else tr


# --------------------------------------------------------------------------
# diagnosis

def _prop1_structure(p):
    return (isinstance(p.g, Zero) and p.A.shape[0] == p.A.shape[1]
            and np.array_equal(p.A, np.eye(p.p1)) and np.all(p.c == 0)
            and isinstance(p.X, WholeSpace) and isinstance(p.Z, WholeSpace)
            and np.linalg.matrix_rank(p.B) == p.p2)


def prop1_bound_ratios(trace: IterationTrace, p: StructuredProblem) -> np.ndarray:
    """``r(t+1) / ((M / rho(t)) (1 + ||B (B'B)^-1 B'||))`` for ``t >= 0``.

    ``M`` is the largest gradient norm of ``f`` seen along the trace.
    """
    B = p.B
    proj = B @ np.linalg.solve(B.T @ B, B.T)
    factor = 1.0 + np.linalg.norm(proj, 2)
    M = max(np.linalg.norm(p.f.grad(r.x)) for r in trace.records[1:])
    out = []
    for rec in trace.records[1:]:
        bound = M / rec.rho * factor
        out.append(rec.r / bound if bound > 0 else (0.0 if rec.r == 0 else math.inf))
    return np.array(out)


def diagnose_trace(trace: IterationTrace, p: StructuredProblem, tol: float,
                   window: int = DUAL_WINDOW) -> dict:
    """Dual-convergence test on the last ``window`` steps, FON at the last
    iterate when it holds, and the unconstrained residual bound where the
    structure allows it."""
    steps = trace.column("dual_step")[1:]
    tail = steps[-window:]
    dual_conv = (trace.verdict != "diverged" and tail.size > 0
                 and bool(np.all(tail <= tol)))
    report = {
        "verdict": trace.verdict,
        "dual_converged": dual_conv,
        "window": int(min(window, tail.size)),
        "window_note": "tail-window surrogate for convergence of y",
        "fon": None,
        "prop1_bound_max_ratio": None,
    }
    if dual_conv:
        fin = trace.final
        cert = check_fon(p, PrimalDualPoint(fin.x, fin.z, fin.y, fin.rho), tol)
        report["fon"] = cert.to_dict()
        report["fon_passed"] = cert.passed
        if all(not np.any(r.y) for r in trace.records):
            report["fon_note"] = "multipliers identically zero; set multipliers recovered only"
    if _prop1_structure(p) and all(not np.any(r.y) for r in trace.records) and trace.iterations:
        ratios = prop1_bound_ratios(trace, p)
        report["prop1_bound_max_ratio"] = float(ratios.max())
        report["prop1_bound_satisfied"] = bool(np.all(ratios <= 1.0 + 1e-9))
    return report
