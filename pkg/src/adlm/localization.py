"""Cooperative sensor-network localization with distributed ADLM and D-GD.

Nodes ``0..S-1`` are sensors with unknown positions; nodes ``S..S+A-1`` are
anchors with known positions. Every sensor holds copies of its own position
and of its sensor neighbours'; an anchor holds copies of its sensor
neighbours only. With ``x`` the stacked copies and ``z`` the sensor
positions the problem is

    minimize  sum_n f_n(x_n)   subject to  x = E z

i.e. ``A = I``, ``B = -E``, ``c = 0`` and ``g = 0``.

The per-node x-updates are independent. They are solved by one batched
kernel (modified Newton or gradient steps with a per-node Armijo search);
every per-node quantity is reduced with ``np.bincount`` over that node's
own entries, so a node's result does not depend on which other nodes share
the batch. Averaging is exact and synchronous.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blocks import RangeResidual, RangeTerm, Zero
from .errors import UsageError
from .fon import FonCertificate, check_fon
from .problem import PrimalDualPoint, StructuredProblem

__all__ = [
    "SensorNetwork",
    "CopyLayout",
    "LocalizationRunConfig",
    "LocalizationTrace",
    "FlaggedNetworkError",
    "generate_network",
    "build_layout",
    "build_problem",
    "run_dadlm",
    "run_dgd",
    "run_localization",
    "rmse",
    "CORNER4",
    "TABLE_ALGOS",
    "derive_rng",
]

CORNER4 = ((0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0))
TABLE_ALGOS = ("adpm", "adpm-y", "admm-1", "admm-10", "dgd")
STREAM_NETWORK = 1


def derive_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for ``stream`` under one global ``seed``."""
    return np.random.default_rng([int(seed), int(stream)])


class FlaggedNetworkError(UsageError):
    """The network has a sensor that cannot be localized."""


# --------------------------------------------------------------------------
# network

@dataclass(frozen=True, eq=False)
class SensorNetwork:
    sensor_positions: np.ndarray
    anchor_positions: np.ndarray
    edges: tuple
    measurements: tuple
    noise_sigma2: float = 0.0
    seed: int = 0
    radius: float = 0.5
    noise_factor: float = 0.0

    def __post_init__(self):
        sp = np.array(self.sensor_positions, dtype=float).reshape(-1, 2)
        ap = np.array(self.anchor_positions, dtype=float).reshape(-1, 2)
        edges = tuple(tuple(sorted((int(a), int(b)))) for a, b in self.edges)
        meas = tuple(float(m) for m in self.measurements)
        if len(edges) != len(meas):
            raise UsageError("one measurement per edge is required")
        n = sp.shape[0] + ap.shape[0]
        for a, b in edges:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise UsageError(f"bad edge ({a}, {b})")
        sp.setflags(write=False)
        ap.setflags(write=False)
        object.__setattr__(self, "sensor_positions", sp)
        object.__setattr__(self, "anchor_positions", ap)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "measurements", meas)

    @property
    def S(self):
        return self.sensor_positions.shape[0]

    @property
    def n_anchors(self):
        return self.anchor_positions.shape[0]

    @property
    def n_nodes(self):
        return self.S + self.n_anchors

    def is_anchor(self, n):
        return n >= self.S

    def position(self, n):
        return self.sensor_positions[n] if n < self.S else self.anchor_positions[n - self.S]

    def neighbors(self, n):
        """``(sensor neighbours, anchor neighbours)``, each sorted."""
        sens, anc = [], []
        for a, b in self.edges:
            if n in (a, b):
                m = b if a == n else a
                (anc if self.is_anchor(m) else sens).append(m)
        return sorted(sens), sorted(anc)

    def measurement(self, a, b):
        key = tuple(sorted((a, b)))
        return self.measurements[self.edges.index(key)]

    @property
    def flags(self):
        """Reasons the network cannot be fully localized (empty if fine)."""
        out = []
        S = self.S
        parent = list(range(self.n_nodes))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        degree = [0] * self.n_nodes
        for a, b in self.edges:
            degree[a] += 1
            degree[b] += 1
            parent[find(a)] = find(b)
        anchored = {find(S + k) for k in range(self.n_anchors)}
        for n in range(S):
            if degree[n] == 0:
                out.append(f"sensor {n} has no measurements")
            elif find(n) not in anchored:
                out.append(f"sensor {n} has no path to an anchor")
        return out

    @property
    def flagged(self):
        return bool(self.flags)

    # ------------------------------------------------------------ JSON
    def to_dict(self):
        pos = [list(map(float, p)) for p in self.sensor_positions] + \
              [list(map(float, p)) for p in self.anchor_positions]
        return {
            "positions": pos,
            "anchor": [False] * self.S + [True] * self.n_anchors,
            "edges": [list(e) for e in self.edges],
            "measurements": list(self.measurements),
            "sigma2": self.noise_sigma2,
            "seed": self.seed,
            "radius": self.radius,
            "noise_factor": self.noise_factor,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d):
        try:
            pos = np.array(d["positions"], dtype=float).reshape(-1, 2)
            anchor = np.array(d["anchor"], dtype=bool)
            if anchor.shape[0] != pos.shape[0]:
                raise UsageError("positions and anchor flags differ in length")
            S = int(np.sum(~anchor))
            if np.any(anchor[:S]) or not np.all(anchor[S:]):
                raise UsageError("sensors must precede anchors")
            return cls(pos[:S], pos[S:], tuple(map(tuple, d["edges"])), tuple(d["measurements"]),
                       float(d.get("sigma2", 0.0)), int(d.get("seed", 0)),
                       float(d.get("radius", 0.5)), float(d.get("noise_factor", 0.0)))
        except KeyError as exc:
            raise UsageError(f"network file misses field {exc}") from None

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def generate_network(S: int, anchors="corner4", radius: float = 0.5, noise_factor: float = 0.05,
                     seed: int = 0) -> SensorNetwork:
    """Random network: sensors uniform in the unit square, an edge for every
    pair closer than ``radius`` (anchor pairs excluded), noisy squared
    distances with variance ``noise_factor * D``, ``D`` the mean true
    squared edge length. Negative noisy values are clamped to 0.
    """
    if S < 0:
        raise UsageError("number of sensors must be nonnegative")
    if not radius > 0:
        raise UsageError("radius must be positive")
    if noise_factor < 0:
        raise UsageError("noise factor must be nonnegative")
    anc = np.array(CORNER4 if isinstance(anchors, str) and anchors == "corner4" else anchors,
                   dtype=float).reshape(-1, 2)
    rng = derive_rng(seed, STREAM_NETWORK)
    sens = rng.uniform(0.0, 1.0, size=(S, 2))
    pos = np.vstack([sens, anc])
    n = pos.shape[0]
    edges, true_d2 = [], []
    for a in range(n):
        for b in range(a + 1, n):
            if a >= S and b >= S:
                continue
            d2 = float(np.sum((pos[a] - pos[b]) ** 2))
            if math.sqrt(d2) < radius:
                edges.append((a, b))
                true_d2.append(d2)
    true_d2 = np.array(true_d2)
    D = float(true_d2.mean()) if true_d2.size else 0.0
    sigma2 = noise_factor * D
    noise = rng.normal(0.0, math.sqrt(sigma2), size=true_d2.shape) if sigma2 > 0 else np.zeros_like(true_d2)
    meas = np.maximum(true_d2 + noise, 0.0)
    return SensorNetwork(sens, anc, tuple(edges), tuple(meas.tolist()), sigma2, seed, radius, noise_factor)


# --------------------------------------------------------------------------
# copy layout and problem

@dataclass(frozen=True, eq=False)
class CopyLayout:
    """Copies ``(holder, sensor)`` in holder-major order.

    ``node_copies[n]`` lists the sensors whose position node ``n`` holds;
    ``E`` is the stacked ``2K x 2S`` selection matrix.
    """

    S: int
    n_nodes: int
    node_copies: tuple
    copies: tuple

    @property
    def K(self):
        return len(self.copies)

    def copy_index(self, holder, sensor):
        return self._index[(holder, sensor)]

    def __post_init__(self):
        object.__setattr__(self, "_index", {c: k for k, c in enumerate(self.copies)})
        owner = np.array([c[0] for c in self.copies], dtype=int)
        target = np.array([c[1] for c in self.copies], dtype=int)
        object.__setattr__(self, "owner", owner)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "holder_count",
                           np.bincount(target, minlength=self.S).astype(float))

    @property
    def E(self):
        E = np.zeros((2 * self.K, 2 * self.S))
        for k, m in enumerate(self.target):
            E[2 * k, 2 * m] = 1.0
            E[2 * k + 1, 2 * m + 1] = 1.0
        return E

    def E_n(self, n):
        rows = [k for k, c in enumerate(self.copies) if c[0] == n]
        E = self.E
        idx = np.array([[2 * k, 2 * k + 1] for k in rows], dtype=int).reshape(-1)
        return E[idx]

    def expand(self, z):
        """``E z`` without forming ``E``."""
        return np.asarray(z, dtype=float).reshape(-1, 2)[self.target].reshape(-1)

    def gather(self, v):
        """``E' v``: sum copies into their sensor slot."""
        V = np.asarray(v, dtype=float).reshape(-1, 2)
        out = np.zeros((self.S, 2))
        out[:, 0] = np.bincount(self.target, weights=V[:, 0], minlength=self.S)
        out[:, 1] = np.bincount(self.target, weights=V[:, 1], minlength=self.S)
        return out.reshape(-1)

    def average(self, v):
        """Exact minimizer ``(E'E)^-1 E' v``: per-sensor mean over holders."""
        cnt = np.repeat(self.holder_count, 2)
        return self.gather(v) / np.where(cnt > 0, cnt, 1.0)


def build_layout(net: SensorNetwork) -> CopyLayout:
    node_copies, copies = [], []
    for n in range(net.n_nodes):
        sens, _ = net.neighbors(n)
        held = sorted(set(sens) | ({n} if n < net.S else set()))
        node_copies.append(tuple(held))
        copies += [(n, m) for m in held]
    return CopyLayout(net.S, net.n_nodes, tuple(node_copies), tuple(copies))


def _terms(net, layout):
    """Range terms in copy coordinates with their owning node."""
    terms, owners = [], []
    for n in range(net.n_nodes):
        sens, anc = net.neighbors(n)
        if n < net.S:
            i = layout.copy_index(n, n)
            for m in sens:
                terms.append(RangeTerm(i, net.measurement(n, m), j=layout.copy_index(n, m)))
                owners.append(n)
            for m in anc:
                terms.append(RangeTerm(i, net.measurement(n, m), anchor=tuple(net.position(m))))
                owners.append(n)
        else:
            a = tuple(net.position(n))
            for m in sens:
                terms.append(RangeTerm(layout.copy_index(n, m), net.measurement(n, m), anchor=a))
                owners.append(n)
    return tuple(terms), np.array(owners, dtype=int)


def build_problem(net: SensorNetwork, allow_flagged: bool = False):
    """``(StructuredProblem, CopyLayout)`` for the consensus form."""
    if net.flagged and not allow_flagged:
        raise FlaggedNetworkError("network flagged: " + "; ".join(net.flags))
    if net.S == 0:
        raise UsageError("network has no sensors to localize")
    layout = build_layout(net)
    terms, _ = _terms(net, layout)
    f = RangeResidual(2 * layout.K, terms)
    E = layout.E
    p = StructuredProblem(f, Zero(2 * net.S), np.eye(2 * layout.K), -E, np.zeros(2 * layout.K))
    return p, layout


def rmse(estimates, net: SensorNetwork) -> float:
    """Root-mean-square Euclidean position error over sensors."""
    est = np.asarray(estimates, dtype=float).reshape(-1, 2)
    if est.shape[0] != net.S:
        raise UsageError(f"expected {net.S} estimates, got {est.shape[0]}")
    if net.S == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum((est - net.sensor_positions) ** 2, axis=1))))


# --------------------------------------------------------------------------
# batched per-node kernel

class _NodeKernel:
    """Vectorized evaluation of every node's local subproblem

        phi_n(x_n) = f_n(x_n) + rho/2 ||x_n - v_n||^2

    with per-node values, gradients and padded Hessian blocks."""

    def __init__(self, net, layout):
        terms, towner = _terms(net, layout)
        self.N = net.n_nodes
        self.K = layout.K
        self.towner = towner
        self.ti = np.array([t.i for t in terms], dtype=int)
        self.has_j = np.array([t.j is not None for t in terms], dtype=bool)
        self.tj = np.array([t.j if t.j is not None else 0 for t in terms], dtype=int)
        self.anc = np.array([t.anchor if t.anchor is not None else (0.0, 0.0) for t in terms],
                            dtype=float).reshape(-1, 2)
        self.d2 = np.array([t.d2 for t in terms], dtype=float)
        self.own2 = np.repeat(layout.owner, 2)
        counts = np.array([len(c) for c in layout.node_copies], dtype=int)
        self.kmax = int(counts.max()) if counts.size else 0
        m = 2 * self.kmax
        self.m = m
        # local slot of every copy inside its owner's block
        slot = np.zeros(self.K, dtype=int)
        start = 0
        for n, c in enumerate(layout.node_copies):
            slot[start:start + len(c)] = np.arange(len(c))
            start += len(c)
        self.slot = slot
        # padded coordinate map (N, m): flat coordinate index or -1
        pad = -np.ones((self.N, m), dtype=int)
        for k in range(self.K):
            n, s = layout.owner[k], slot[k]
            pad[n, 2 * s] = 2 * k
            pad[n, 2 * s + 1] = 2 * k + 1
        self.pad = pad
        self.valid = pad >= 0
        self.pad_safe = np.where(self.valid, pad, 0)
        self.has_vars = counts > 0
        # Hessian scatter: each term adds h to (i,i) and, for pair terms,
        # h to (j,j) and -h to (i,j), (j,i)
        flat, src, sign = [], [], []
        mm = m * m
        for t in range(len(terms)):
            n = towner[t]
            li = slot[self.ti[t]]
            blocks = [(li, li, 1.0)]
            if self.has_j[t]:
                lj = slot[self.tj[t]]
                blocks += [(lj, lj, 1.0), (li, lj, -1.0), (lj, li, -1.0)]
            for bi, bj, sg in blocks:
                for a in range(2):
                    for b in range(2):
                        flat.append(n * mm + (2 * bi + a) * m + (2 * bj + b))
                        src.append(t * 4 + a * 2 + b)
                        sign.append(sg)
        self.h_flat = np.array(flat, dtype=int)
        self.h_src = np.array(src, dtype=int)
        self.h_sign = np.array(sign, dtype=float)
        self.eye_pad = np.where(self.valid, 0.0, 1.0)

    def _resid(self, x):
        P = x.reshape(-1, 2)
        other = np.where(self.has_j[:, None], P[self.tj], self.anc)
        u = P[self.ti] - other
        r = self.d2 - np.einsum("ij,ij->i", u, u)
        return u, r

    def node_f(self, x):
        _, r = self._resid(x)
        return np.bincount(self.towner, weights=r * r, minlength=self.N)

    def grad_f(self, x):
        u, r = self._resid(x)
        gu = -4.0 * r[:, None] * u
        idx = np.concatenate([self.ti, self.tj[self.has_j]])
        w = np.concatenate([gu, -gu[self.has_j]])
        g = np.empty((self.K, 2))
        g[:, 0] = np.bincount(idx, weights=w[:, 0], minlength=self.K)
        g[:, 1] = np.bincount(idx, weights=w[:, 1], minlength=self.K)
        return g.reshape(-1)

    def hess_blocks(self, x, u=None, r=None):
        if u is None:
            u, r = self._resid(x)
        h = 8.0 * u[:, :, None] * u[:, None, :]
        h[:, 0, 0] -= 4.0 * r
        h[:, 1, 1] -= 4.0 * r
        vals = h.reshape(-1)[self.h_src] * self.h_sign
        H = np.bincount(self.h_flat, weights=vals, minlength=self.N * self.m * self.m)
        return H.reshape(self.N, self.m, self.m)

    def to_pad(self, v):
        return np.where(self.valid, v[self.pad_safe], 0.0)

    def from_pad(self, vp, out):
        out[self.pad[self.valid]] = vp[self.valid]
        return out

    def node_sum(self, v):
        return np.bincount(self.own2, weights=v, minlength=self.N)

    def solve(self, x0, v, rho, active, mode="newton", tol=1e-9, max_iter=100):
        """Local minimization of every active node's subproblem.

        Returns ``(x, failed)`` where ``failed`` marks nodes whose iterate
        became non-finite; those keep their warm start.
        """
        x = x0.copy()
        act = active & self.has_vars
        eye = np.eye(self.m)
        diag_rho = np.where(self.valid, rho, 1.0)

        def phi(xx):
            d = xx - v
            return self.node_f(xx) + 0.5 * rho * self.node_sum(d * d)

        fx = phi(x)
        for _ in range(max_iter):
            g = self.grad_f(x) + rho * (x - v)
            gn = np.sqrt(self.node_sum(g * g))
            act = act & (gn > tol)
            if not act.any():
                break
            gp = self.to_pad(g)
            H = self.hess_blocks(x) + eye[None] * diag_rho[:, None, :]
            lam, V = np.linalg.eigh(H)
            if mode == "newton":
                scale = np.maximum(np.max(np.abs(lam), axis=1, keepdims=True), 1.0)
                lam_mod = np.maximum(np.abs(lam), 1e-8 * scale)
                coef = np.einsum("nji,nj->ni", V, gp) / lam_mod
                dp = -np.einsum("nij,nj->ni", V, coef)
            else:
                dp = -gp / np.max(np.abs(lam), axis=1, keepdims=True)
            d = self.from_pad(dp, np.zeros_like(x))
            slope = self.node_sum(g * d)
            # predicted decrease below roundoff in phi: nothing left to gain
            act &= -slope > 8 * np.finfo(float).eps * (1.0 + np.abs(fx))
            if not act.any():
                break
            alpha = np.ones(self.N)
            pending = act.copy()
            xn = x.copy()
            fn = fx.copy()
            for _ls in range(40):
                trial = np.where(pending[self.own2], x + alpha[self.own2] * d, xn)
                ft = phi(trial)
                ok = pending & np.isfinite(ft) & (ft <= fx + 1e-4 * alpha * slope)
                xn = np.where(ok[self.own2], trial, xn)
                fn = np.where(ok, ft, fn)
                pending &= ~ok
                if not pending.any():
                    break
                alpha = np.where(pending, 0.5 * alpha, alpha)
            # no decrease, or a negligible step: numerically stationary
            step = np.sqrt(self.node_sum((xn - x) ** 2))
            scale = 1.0 + np.sqrt(self.node_sum(x * x))
            act &= ~pending & (step > 1e-13 * scale)
            x, fx = xn, fn
        failed = ~np.isfinite(self.node_sum(x))
        if failed.any():
            x = np.where(failed[self.own2], x0, x)
        return x, failed


# --------------------------------------------------------------------------
# runs

@dataclass(frozen=True)
class LocalizationRunConfig:
    """One row of the experiment table.

    ``algo`` is ``adpm`` (y = 0, rho(t) = t+1), ``adpm-y`` (multiplier
    update, rho(t) = t+1), ``admm-<rho>`` (fixed rho) or ``dgd``
    (step 1/rho(t), rho(t) = t+1).
    """

    algo: str = "admm-1"
    iterations: int = 5000
    seed: int = 0
    z_init: Optional[tuple] = None
    z_update: str = "exact"          # or "literal"
    node_solver: str = "newton"      # or "gradient"
    workers: int = 1
    inner_tol: float = 1e-9
    inner_max_iter: int = 100
    divergence_bound: float = 1e6
    allow_flagged: bool = False
    tol: Optional[float] = None      # stop once max_n ||x_n - E_n z|| < tol

    def __post_init__(self):
        self.kind  # validates algo
        if self.iterations < 1:
            raise UsageError("iterations must be positive")
        if self.z_update not in ("exact", "literal"):
            raise UsageError("z_update must be 'exact' or 'literal'")
        if self.node_solver not in ("newton", "gradient"):
            raise UsageError("node_solver must be 'newton' or 'gradient'")
        if self.workers < 1:
            raise UsageError("workers must be at least 1")

    @property
    def kind(self):
        a = self.algo
        if a in ("adpm", "adpm-y", "dgd"):
            return a
        if a.startswith("admm-"):
            try:
                rho = float(a[5:])
            except ValueError:
                rho = -1.0
            if rho > 0:
                return "admm"
        raise UsageError(f"unknown localization algo '{a}' (table rows: {', '.join(TABLE_ALGOS)}, "
                         "or admm-<rho>)")

    def rho(self, t):
        if self.kind == "admm":
            return float(self.algo[5:])
        return float(t + 1)

    @property
    def dual_update(self):
        return self.kind in ("adpm-y", "admm")

    def to_dict(self):
        return {"algo": self.algo, "iterations": self.iterations, "seed": self.seed,
                "z_init": None if self.z_init is None else list(map(float, np.ravel(self.z_init))),
                "z_update": self.z_update, "node_solver": self.node_solver,
                "workers": self.workers, "inner_tol": self.inner_tol,
                "inner_max_iter": self.inner_max_iter,
                "divergence_bound": self.divergence_bound, "tol": self.tol}


COLUMNS = ("t", "rho", "r", "stationarity", "objective", "dual_step", "max_node_residual",
           "rmse", "dual_norm", "node_failures")


@dataclass(frozen=True, eq=False)
class LocalizationTrace:
    """Per-iteration network quantities; ``r`` is ``||x - Ez||`` and
    ``stationarity`` is ``||E' grad f(x)||``."""

    columns: dict
    z_history: np.ndarray
    verdict: str
    algo: str
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    config: dict = field(default_factory=dict)
    fon: Optional[FonCertificate] = None

    @property
    def iterations(self):
        return len(self.columns["t"]) - 1

    def column(self, name):
        return self.columns[name]

    def csv_text(self) -> str:
        S2 = self.z_history.shape[1]
        head = list(COLUMNS) + [f"z{i}" for i in range(S2)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for k in range(len(self.columns["t"])):
            row = [str(int(self.columns["t"][k]))]
            row += ["%.17g" % self.columns[c][k] for c in COLUMNS[1:-1]]
            row.append(str(int(self.columns["node_failures"][k])))
            row += ["%.17g" % v for v in self.z_history[k]]
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def summary(self):
        c = self.columns
        return {
            "algo": self.algo,
            "verdict": self.verdict,
            "iterations": self.iterations,
            "final_r": float(c["r"][-1]),
            "final_stationarity": float(c["stationarity"][-1]),
            "final_objective": float(c["objective"][-1]),
            "final_rmse": float(c["rmse"][-1]),
            "dual_step_tail_max": float(np.max(c["dual_step"][-20:])),
            "node_failures": int(np.sum(c["node_failures"])),
            "config": self.config,
            "fon": None if self.fon is None else self.fon.to_dict(),
        }


def _literal_average(layout, v, net):
    """Average over the sensor neighbours' copies, normalized by their count;
    sensors without sensor neighbours fall back to all holders."""
    V = np.asarray(v, dtype=float).reshape(-1, 2)
    exact = layout.average(v).reshape(-1, 2)
    out = exact.copy()
    for n in range(net.S):
        sens, _ = net.neighbors(n)
        if sens:
            out[n] = np.mean([V[layout.copy_index(i, n)] for i in sens], axis=0)
    return out.reshape(-1)


class _Runner:
    def __init__(self, net, cfg):
        if net.flagged and not cfg.allow_flagged:
            raise FlaggedNetworkError("network flagged: " + "; ".join(net.flags))
        self.net, self.cfg = net, cfg
        self.problem, self.layout = build_problem(net, allow_flagged=True)
        self.kern = _NodeKernel(net, self.layout)
        S = net.S
        if cfg.z_init is None:
            z0 = np.tile([0.5, 0.5], S)
        else:
            z0 = np.asarray(cfg.z_init, dtype=float).reshape(-1)
            if z0.size == 2:
                z0 = np.tile(z0, S)
            if z0.size != 2 * S:
                raise UsageError(f"z_init needs 2 or {2 * S} values")
        self.z0 = z0

    def average(self, v):
        if self.cfg.z_update == "literal":
            return _literal_average(self.layout, v, self.net)
        return self.layout.average(v)

    def node_solve(self, x0, v, rho):
        cfg, kern = self.cfg, self.kern
        if cfg.workers == 1:
            return kern.solve(x0, v, rho, np.ones(kern.N, dtype=bool), cfg.node_solver,
                              cfg.inner_tol, cfg.inner_max_iter)
        chunks = np.array_split(np.arange(kern.N), cfg.workers)

        def work(ch):
            mask = np.zeros(kern.N, dtype=bool)
            mask[ch] = True
            return mask, kern.solve(x0, v, rho, mask, cfg.node_solver, cfg.inner_tol,
                                    cfg.inner_max_iter)

        x = x0.copy()
        failed = np.zeros(kern.N, dtype=bool)
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            for mask, (xc, fc) in pool.map(work, [c for c in chunks if c.size]):
                sel = mask[self.kern.own2]
                x[sel] = xc[sel]
                failed |= fc & mask
        return x, failed

    def metrics(self, x, z, y, y_prev):
        lay, kern = self.layout, self.kern
        d = x - lay.expand(z)
        node_res = np.sqrt(kern.node_sum(d * d))
        grad = kern.grad_f(x)
        return {
            "r": float(np.linalg.norm(d)),
            "stationarity": float(np.linalg.norm(lay.gather(grad))),
            "objective": float(np.sum(kern.node_f(x))),
            "dual_step": float(np.linalg.norm(y - y_prev)),
            "max_node_residual": float(node_res.max()) if node_res.size else 0.0,
            "rmse": rmse(z, self.net) if np.all(np.isfinite(z)) else math.inf,
            "dual_norm": float(np.linalg.norm(y)),
        }

    def run(self, dgd=False):
        cfg, lay = self.cfg, self.layout
        z = self.z0.copy()
        x = lay.expand(z)
        y = np.zeros_like(x)
        cols = {c: [] for c in COLUMNS}
        zh = []

        def push(t, rho, m, nf):
            cols["t"].append(t)
            cols["rho"].append(rho)
            for k, val in m.items():
                cols[k].append(val)
            cols["node_failures"].append(nf)
            zh.append(z.copy())

        push(0, cfg.rho(0), self.metrics(x, z, y, y), 0)
        verdict = "completed"
        for t in range(cfg.iterations):
            rho = cfg.rho(t)
            if dgd:
                xbar = lay.expand(z)
                xn = xbar - self.kern.grad_f(xbar) / rho
                failed = np.zeros(self.kern.N, dtype=bool)
                zn = self.average(xn)
            else:
                v = lay.expand(z) - y / rho
                xn, failed = self.node_solve(x, v, rho)
                zn = self.average(xn + y / rho)
            yn = y + rho * (xn - lay.expand(zn)) if cfg.dual_update and not dgd else y
            m = self.metrics(xn, zn, yn, y)
            x, z, y = xn, zn, yn
            push(t + 1, rho, m, int(failed.sum()))
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))) \
                    or np.linalg.norm(z) > cfg.divergence_bound \
                    or np.linalg.norm(x) > cfg.divergence_bound:
                verdict = "diverged"
                break
            if cfg.tol is not None and m["max_node_residual"] < cfg.tol:
                verdict = "converged"
                break
        columns = {k: np.array(v, dtype=float) for k, v in cols.items()}
        fon = None
        if cfg.dual_update and not dgd and verdict != "diverged":
            fon = check_fon(self.problem, PrimalDualPoint(x, z, y, cfg.rho(cfg.iterations)), 1e-6)
        return LocalizationTrace(columns, np.array(zh), verdict, cfg.algo, x, z, y,
                                 cfg.to_dict(), fon)


def run_dadlm(net: SensorNetwork, cfg: LocalizationRunConfig):
    """Distributed ADLM. Returns ``(trace, estimates)`` with estimates ``S x 2``."""
    if cfg.kind == "dgd":
        raise UsageError("use run_dgd for the dgd configuration")
    tr = _Runner(net, cfg).run()
    return tr, tr.z.reshape(-1, 2)


def run_dgd(net: SensorNetwork, cfg: LocalizationRunConfig):
    """Distributed gradient descent from averaged copies."""
    if cfg.kind != "dgd":
        raise UsageError("run_dgd needs algo 'dgd'")
    tr = _Runner(net, cfg).run(dgd=True)
    return tr, tr.z.reshape(-1, 2)


def run_localization(net, cfg):
    return run_dgd(net, cfg) if cfg.kind == "dgd" else run_dadlm(net, cfg)
