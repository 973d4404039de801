"""First-order necessary (FON) optimality certificates.

A certificate evaluates, at a candidate primal-dual point, the four
classical conditions: primal feasibility, nonnegative inequality
multipliers, complementary slackness and a vanishing Lagrangian gradient.
Multipliers of the set constraints are not supplied by the caller; they are
recovered by least squares from the stationarity equation restricted to the
active constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import PrimalDualPoint, StructuredProblem, coupling_residual

__all__ = ["FonCertificate", "check_fon", "recover_block_multipliers"]

# D'D is treated as singular below this relative singular-value level
REGULARITY_RCOND = 1e-10


@dataclass(frozen=True)
class BlockMultipliers:
    equality: np.ndarray
    inequality: np.ndarray
    stationarity: float
    negativity: float
    complementarity: float
    set_violation: float
    regular: bool


def recover_block_multipliers(grad0, constraint_set, point, tol) -> BlockMultipliers:
    """Least-squares multipliers for one block.

    Solves ``min || grad0 + J_eq' lam + J_act' gam ||`` over the equality
    constraints and the inequalities with value ``>= -tol``; the inequality
    part is then clamped at zero and the clamped-away magnitude returned as
    ``negativity``.
    """
    ev, ej, iv, ij = constraint_set.constraints(point)
    n = grad0.shape[0]
    ej = ej.reshape(-1, n)
    ij = ij.reshape(-1, n)
    active = iv >= -tol
    D = np.vstack([ej, ij[active]]).T
    lam = np.zeros(ev.size)
    gam = np.zeros(iv.size)
    negativity = 0.0
    regular = True
    if D.shape[1]:
        s = np.linalg.svd(D, compute_uv=False)
        regular = D.shape[1] <= n and s[-1] > REGULARITY_RCOND * max(1.0, s[0])
        sol, *_ = np.linalg.lstsq(D, -grad0, rcond=None)
        lam = sol[:ev.size]
        raw = sol[ev.size:]
        if raw.size:
            negativity = float(max(0.0, -raw.min()))
        gam[active] = np.maximum(raw, 0.0)
    resid = grad0 + ej.T @ lam + ij.T @ gam
    comp = float(np.max(np.abs(gam * iv))) if iv.size else 0.0
    viol = 0.0
    if ev.size:
        viol = max(viol, float(np.max(np.abs(ev))))
    if iv.size:
        viol = max(viol, float(np.max(iv)))
    return BlockMultipliers(lam, gam, float(np.linalg.norm(resid)), negativity, comp, viol, regular)


@dataclass(frozen=True)
class FonCertificate:
    primal_residual: float
    set_violation: float
    dual_feasibility_violation: float
    complementary_slackness_violation: float
    stationarity_residual_x: float
    stationarity_residual_z: float
    lam: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    omega: np.ndarray
    y: np.ndarray
    tol: float
    regularity_violated: bool = False
    conditions: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.conditions.values())

    @property
    def residuals(self):
        return {
            "primal_residual": self.primal_residual,
            "set_violation": self.set_violation,
            "dual_feasibility_violation": self.dual_feasibility_violation,
            "complementary_slackness_violation": self.complementary_slackness_violation,
            "stationarity_residual_x": self.stationarity_residual_x,
            "stationarity_residual_z": self.stationarity_residual_z,
        }

    def to_dict(self):
        d = dict(self.residuals)
        d.update({
            "passed": self.passed,
            "tol": self.tol,
            "regularity_violated": self.regularity_violated,
            "conditions": dict(self.conditions),
            "multipliers": {"lambda": self.lam.tolist(), "gamma": self.gamma.tolist(),
                            "mu": self.mu.tolist(), "omega": self.omega.tolist(),
                            "y": self.y.tolist()},
        })
        return d


def check_fon(p: StructuredProblem, pt: PrimalDualPoint, tol: float = 1e-6) -> FonCertificate:
    """Evaluate the first-order conditions of ``p`` at ``pt``.

    ``tol`` is both the pass threshold for every residual and the
    active-set threshold (an inequality counts as active when its value is
    at least ``-tol``).
    """
    x, z, y = pt.x, pt.z, pt.y
    r = coupling_residual(p, x, z)
    bx = recover_block_multipliers(p.f.grad(x) + p.A.T @ y, p.X, x, tol)
    bz = recover_block_multipliers(p.g.grad(z) + p.B.T @ y, p.Z, z, tol)
    primal = float(np.linalg.norm(r))
    set_viol = max(bx.set_violation, bz.set_violation)
    dual_viol = max(bx.negativity, bz.negativity)
    comp = max(bx.complementarity, bz.complementarity)
    conditions = {
        "primal_feasibility": primal <= tol and set_viol <= tol,
        "dual_feasibility": dual_viol <= tol,
        "complementary_slackness": comp <= tol,
        "lagrangian_vanishes": bx.stationarity <= tol and bz.stationarity <= tol,
    }
    return FonCertificate(
        primal_residual=primal,
        set_violation=set_viol,
        dual_feasibility_violation=dual_viol,
        complementary_slackness_violation=comp,
        stationarity_residual_x=bx.stationarity,
        stationarity_residual_z=bz.stationarity,
        lam=bx.equality, gamma=bx.inequality, mu=bz.equality, omega=bz.inequality,
        y=np.array(y), tol=float(tol),
        regularity_violated=not (bx.regular and bz.regular),
        conditions=conditions,
    )
