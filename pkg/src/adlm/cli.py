"""Command-line front end.

Subcommands ``solve``, ``localize``, ``oracle`` and ``replay``. Every run
that writes files also writes a manifest (argv, config, seed, version and
SHA-256 digests of inputs and outputs) that ``replay`` uses to reproduce it.

Exit codes: 0 converged/completed/agreement, 1 usage or input error,
2 iteration limit reached, 3 diverged, 4 flagged network, 5 oracle
disagreement, 6 replay mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .algorithms import (DualPolicy, PenaltySchedule, StopRule, diagnose_trace, run_adpm,
                         run_admm, run_method_of_multipliers, run_quadratic_penalty)
from .blocks import scalar_block
from .errors import SpecError, UsageError
from .instances import (cos_sin, huber_consensus, indefinite_box_problem,
                        nonconvex_sets_example, quadratic_consensus)
from .localization import (TABLE_ALGOS, FlaggedNetworkError, LocalizationRunConfig,
                           SensorNetwork, generate_network, run_localization)
from .oracle import ScalarInstance, predict_fixed_point, verify_prediction
from .problem import load_problem
from .subsolvers import STRATEGIES, SolverPolicy

EXIT_OK, EXIT_USAGE, EXIT_MAXITER, EXIT_DIVERGED, EXIT_FLAGGED, EXIT_DISAGREE, EXIT_REPLAY = range(7)
VERDICT_EXIT = {"converged": EXIT_OK, "completed": EXIT_OK, "max-iters": EXIT_MAXITER,
                "diverged": EXIT_DIVERGED}

BUILTINS = {
    "quadratic-consensus": quadratic_consensus,
    "interval-union": nonconvex_sets_example,
    "cos-sin": cos_sin,
    "huber-consensus": huber_consensus,
    "indefinite-box": indefinite_box_problem,
}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# manifest

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int
    version: str = __version__
    inputs: dict = field(default_factory=dict)     # path -> digest
    outputs: dict = field(default_factory=dict)    # path -> digest
    output_args: dict = field(default_factory=dict)  # flag -> path

    def to_dict(self):
        return {"command": self.command, "argv": self.argv, "config": self.config,
                "seed": self.seed, "version": self.version, "inputs": self.inputs,
                "outputs": self.outputs, "output_args": self.output_args}

    def write(self, path):
        for p in list(self.outputs):
            self.outputs[p] = sha256_file(p)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        try:
            return cls(d["command"], d["argv"], d["config"], d["seed"], d.get("version", ""),
                       d.get("inputs", {}), d.get("outputs", {}), d.get("output_args", {}))
        except KeyError as exc:
            raise UsageError(f"manifest misses field {exc}") from None


def resolve_seed(seed):
    env = os.environ.get("ADLM_SEED")
    if env is not None and env.strip() != "":
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"ADLM_SEED must be an integer, got '{env}'") from None
    return int(seed)


def _floats(text, name):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated numbers, got '{text}'") from None


def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite(v):
    """JSON-safe float: infinities become strings."""
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("+inf" if v > 0 else "-inf")
    return v


# --------------------------------------------------------------------------
# solve

def parse_schedule(text) -> PenaltySchedule:
    """``constant:rho``, ``linear:rho0[,slope]`` or ``geometric:rho0,delta[,kappa]``."""
    kind, _, rest = text.partition(":")
    args = _floats(rest, "schedule") if rest else []
    try:
        if kind == "constant":
            return PenaltySchedule.constant(*args)
        if kind == "linear":
            return PenaltySchedule.linear(*args)
        if kind == "geometric":
            if len(args) == 3:
                if args[2] != int(args[2]):
                    raise UsageError("geometric kappa must be an integer")
                args[2] = int(args[2])
            return PenaltySchedule.geometric(*args)
    except TypeError:
        raise UsageError(f"wrong number of schedule parameters in '{text}'") from None
    raise UsageError(f"unknown schedule '{kind}' (constant, linear, geometric)")


def parse_dual(text) -> DualPolicy:
    if text == "zero":
        return DualPolicy.zero()
    if text.startswith("bounded:"):
        return DualPolicy.bounded(float(text.split(":", 1)[1]))
    raise UsageError(f"unknown dual policy '{text}' (zero, bounded:M0)")


def _load(problem):
    if problem.startswith("builtin:"):
        name = problem.split(":", 1)[1]
        if name not in BUILTINS:
            raise UsageError(f"unknown builtin problem '{name}' (choose from {', '.join(BUILTINS)})")
        return BUILTINS[name](), {}
    if not os.path.exists(problem):
        raise UsageError(f"problem file '{problem}' not found")
    return load_problem(problem), {problem: sha256_file(problem)}


def cmd_solve(a, argv):
    seed = resolve_seed(a.seed)
    p, inputs = _load(a.problem)
    policy = SolverPolicy(a.subsolver, max_inner_iters=a.inner_iters,
                          grid_points_per_dim=a.grid_points, multistart_count=a.multistart,
                          seed=seed)
    stop = StopRule(a.max_iter, a.tol, a.step_tol, a.divergence_bound, a.patience)
    z0 = _floats(a.z0, "z0")
    z0 = np.zeros(p.p2) if z0 is None else np.array(z0)
    y0 = _floats(a.y0, "y0")
    y0 = np.zeros(p.q) if y0 is None else np.array(y0)
    init = (z0, y0) if a.x0 is None else (z0, y0, np.array(_floats(a.x0, "x0")))
    config = {"problem": a.problem, "algo": a.algo, "policy": vars(policy).copy(),
              "stop": vars(stop).copy(), "z0": z0.tolist(), "y0": y0.tolist()}
    if a.algo in ("admm", "mm"):
        if a.rho is None:
            raise UsageError(f"--algo {a.algo} needs --rho")
        run = run_admm if a.algo == "admm" else run_method_of_multipliers
        tr = run(p, a.rho, init, policy, stop, a.fon_tol)
        config["rho"] = a.rho
    else:
        if a.schedule is None:
            raise UsageError(f"--algo {a.algo} needs --schedule")
        sched = parse_schedule(a.schedule)
        config["schedule"] = sched.to_dict()
        if a.algo == "adpm":
            dual = parse_dual(a.dual)
            config["dual"] = dual.to_dict()
            tr = run_adpm(p, sched, dual, init, policy, stop)
        else:
            tr = run_quadratic_penalty(p, sched, init, policy, stop)
    summary = tr.summary()
    summary["diagnosis"] = diagnose_trace(tr, p, a.fon_tol)
    summary["fon_passed"] = None if tr.fon is None else tr.fon.passed
    outs = {}
    if a.trace:
        tr.write_csv(a.trace)
        outs["--trace"] = a.trace
    if a.summary:
        _json_dump(summary, a.summary)
        outs["--summary"] = a.summary
    else:
        print(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    manifest = a.manifest or (os.path.splitext(a.summary or a.trace)[0] + ".manifest.json"
                              if (a.summary or a.trace) else None)
    if manifest:
        outs["--manifest"] = manifest
        m = RunManifest("solve", argv, config, seed, inputs=inputs,
                        outputs={v: "" for k, v in outs.items() if k != "--manifest"},
                        output_args=outs)
        m.write(manifest)
    print(f"{tr.algo}: {tr.verdict} after {tr.iterations} iterations, r = {tr.final.r:.3e}",
          file=sys.stderr)
    return VERDICT_EXIT[tr.verdict]


# --------------------------------------------------------------------------
# localize

def cmd_localize(a, argv):
    seed = resolve_seed(a.seed)
    inputs = {}
    if a.network:
        if not os.path.exists(a.network):
            raise UsageError(f"network file '{a.network}' not found")
        net = SensorNetwork.load(a.network)
        inputs[a.network] = sha256_file(a.network)
    else:
        anchors = a.anchors if a.anchors == "corner4" else \
            np.array(_floats(a.anchors, "anchors")).reshape(-1, 2)
        net = generate_network(a.sensors, anchors, a.radius, a.noise_factor, seed)
    if net.flagged and not a.allow_disconnected:
        for msg in net.flags:
            print(f"flagged: {msg}", file=sys.stderr)
        return EXIT_FLAGGED
    algos = list(TABLE_ALGOS) if a.algo == "all" else [a.algo]
    os.makedirs(a.out_dir, exist_ok=True)
    net_path = os.path.join(a.out_dir, "network.json")
    net.save(net_path)
    outs = {net_path: ""}
    summaries, code = {}, EXIT_OK
    z_init = _floats(a.z_init, "z-init")
    for algo in algos:
        cfg = LocalizationRunConfig(algo=algo, iterations=a.iters, seed=seed,
                                    z_init=None if z_init is None else tuple(z_init),
                                    z_update=a.z_update, workers=a.workers,
                                    allow_flagged=a.allow_disconnected)
        tr, est = run_localization(net, cfg)
        tpath = os.path.join(a.out_dir, f"trace_{algo}.csv")
        epath = os.path.join(a.out_dir, f"estimates_{algo}.json")
        tr.write_csv(tpath)
        _json_dump({"algo": algo, "estimates": est.tolist(), "rmse": _finite(tr.summary()["final_rmse"])},
                   epath)
        outs[tpath] = outs[epath] = ""
        s = tr.summary()
        summaries[algo] = {k: _finite(v) for k, v in s.items()}
        code = max(code, VERDICT_EXIT[tr.verdict])
        print(f"{algo}: {tr.verdict}, rmse {s['final_rmse']:.6g}, ||x-Ez|| {s['final_r']:.3e}",
              file=sys.stderr)
    spath = os.path.join(a.out_dir, "summary.json")
    _json_dump({"network": {"sensors": net.S, "anchors": net.n_anchors, "edges": len(net.edges),
                            "sigma2": net.noise_sigma2, "seed": net.seed},
                "runs": summaries}, spath)
    outs[spath] = ""
    config = {"algos": algos, "iterations": a.iters, "sensors": net.S, "radius": net.radius,
              "noise_factor": net.noise_factor, "z_update": a.z_update, "workers": a.workers}
    RunManifest("localize", argv, config, seed, inputs=inputs, outputs=outs,
                output_args={"--out-dir": a.out_dir}).write(os.path.join(a.out_dir, "manifest.json"))
    return code


# --------------------------------------------------------------------------
# oracle

def cmd_oracle(a, argv):
    inst = ScalarInstance(scalar_block(a.f), scalar_block(a.g), a.z0, a.rho, a.L)
    pred = predict_fixed_point(inst, a.scan_bound, a.scan_step)
    out = {"instance": {"f": a.f, "g": a.g, "z0": inst.z0, "rho": inst.rho, "L": inst.L,
                        "y0": inst.y0},
           "prediction": pred.to_dict()}
    code = EXIT_OK
    if a.verify:
        rep = verify_prediction(inst, pred)
        out["verification"] = rep.to_dict()
        code = EXIT_OK if rep.agree else EXIT_DISAGREE
    text = json.dumps(out, indent=2, sort_keys=True, default=_json_default)
    print(text)
    if a.out:
        with open(a.out, "w") as fh:
            fh.write(text + "\n")
        RunManifest("oracle", argv, {"f": a.f, "g": a.g, "z0": a.z0, "rho": a.rho},
                    0, outputs={a.out: ""}, output_args={"--out": a.out}
                    ).write(os.path.splitext(a.out)[0] + ".manifest.json")
    return code


# --------------------------------------------------------------------------
# replay

def cmd_replay(a, argv):
    m = RunManifest.read(a.manifest)
    for path, digest in m.inputs.items():
        if not os.path.exists(path) or sha256_file(path) != digest:
            raise UsageError(f"input '{path}' is missing or changed since the recorded run")
    out_dir = a.out_dir or tempfile.mkdtemp(prefix="adlm-replay-")
    os.makedirs(out_dir, exist_ok=True)
    new_argv = list(m.argv)
    remap = {}
    for flag, old in m.output_args.items():
        if flag == "--out-dir":
            new = out_dir
            for path in m.outputs:
                remap[path] = os.path.join(out_dir, os.path.relpath(path, old))
        else:
            new = os.path.join(out_dir, os.path.basename(old))
            remap[old] = new
        if flag in new_argv:
            new_argv[new_argv.index(flag) + 1] = new
        else:
            new_argv += [flag, new]
    env_seed = os.environ.pop("ADLM_SEED", None)
    try:
        # the recorded seed already reflects any override
        if "--seed" in new_argv:
            new_argv[new_argv.index("--seed") + 1] = str(m.seed)
        elif m.command in ("solve", "localize"):
            new_argv += ["--seed", str(m.seed)]
        main(new_argv)
    finally:
        if env_seed is not None:
            os.environ["ADLM_SEED"] = env_seed
    bad = []
    for old, digest in m.outputs.items():
        new = remap.get(old, old)
        if not os.path.exists(new) or sha256_file(new) != digest:
            bad.append(old)
    report = {"replayed_into": out_dir, "outputs": len(m.outputs), "mismatched": bad}
    print(json.dumps(report, indent=2))
    return EXIT_OK if not bad else EXIT_REPLAY


# --------------------------------------------------------------------------

def build_parser():
    ap = _Parser(prog="adlm", description="Alternating direction penalty and multiplier methods.")
    ap.add_argument("--version", action="version", version=f"adlm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="run an algorithm on a problem spec")
    s.add_argument("--problem", required=True,
                   help=f"JSON problem file or builtin:<name> ({', '.join(BUILTINS)})")
    s.add_argument("--algo", required=True, choices=("adpm", "admm", "qpm", "mm"))
    s.add_argument("--rho", type=float, help="fixed penalty (admm, mm)")
    s.add_argument("--schedule", help="linear:rho0[,slope] | geometric:rho0,delta[,kappa] (adpm, qpm)")
    s.add_argument("--dual", default="zero", help="zero | bounded:M0 (adpm)")
    s.add_argument("--z0", help="comma-separated initial z")
    s.add_argument("--y0", help="comma-separated initial y")
    s.add_argument("--x0", help="comma-separated initial x")
    s.add_argument("--subsolver", default="auto", choices=STRATEGIES)
    s.add_argument("--grid-points", type=int)
    s.add_argument("--multistart", type=int, default=1)
    s.add_argument("--inner-iters", type=int, default=10000)
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("--tol", type=float, default=1e-8, help="primal residual tolerance")
    s.add_argument("--step-tol", type=float, default=1e-10)
    s.add_argument("--patience", type=int, default=20,
                   help="consecutive iterations the stop test must hold")
    s.add_argument("--divergence-bound", type=float, default=1e6)
    s.add_argument("--fon-tol", type=float, default=1e-6)
    s.add_argument("--trace", help="trace CSV path")
    s.add_argument("--summary", help="summary JSON path (stdout if omitted)")
    s.add_argument("--manifest", help="manifest path (default: next to the summary)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_solve)

    lz = sub.add_parser("localize", help="sensor-network localization experiment")
    lz.add_argument("--sensors", type=int, default=10)
    lz.add_argument("--anchors", default="corner4", help="corner4 or x1,y1,x2,y2,...")
    lz.add_argument("--radius", type=float, default=0.5)
    lz.add_argument("--noise-factor", type=float, default=0.05)
    lz.add_argument("--network", help="load a network JSON instead of generating one")
    lz.add_argument("--seed", type=int, default=0)
    lz.add_argument("--algo", default="all",
                    help=f"all | {' | '.join(TABLE_ALGOS)} | admm-<rho>")
    lz.add_argument("--iters", type=int, default=5000)
    lz.add_argument("--z-init", help="x,y for every sensor or a full comma-separated vector")
    lz.add_argument("--z-update", default="exact", choices=("exact", "literal"))
    lz.add_argument("--workers", type=int, default=1)
    lz.add_argument("--out-dir", required=True)
    lz.add_argument("--allow-disconnected", action="store_true")
    lz.set_defaults(fn=cmd_localize)

    o = sub.add_parser("oracle", help="predict the scalar ADMM fixed point")
    o.add_argument("--f", required=True, help="cos | sin | negsq | quad:a,b,c | poly:c0,c1,.. | huber:d,c | zero")
    o.add_argument("--g", required=True)
    o.add_argument("--z0", type=float, default=0.0)
    o.add_argument("--rho", type=float, required=True)
    o.add_argument("--L", type=float, help="derivative Lipschitz constant (default: from the blocks)")
    o.add_argument("--scan-bound", type=float, default=1e3)
    o.add_argument("--scan-step", type=float, default=1e-3)
    o.add_argument("--verify", action="store_true", help="run ADMM and compare")
    o.add_argument("--out", help="also write the JSON here (with a manifest)")
    o.set_defaults(fn=cmd_oracle)

    r = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    r.add_argument("manifest")
    r.add_argument("--out-dir", help="where to write the replayed outputs (default: temp dir)")
    r.set_defaults(fn=cmd_replay)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return a.fn(a, argv)
    except FlaggedNetworkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGGED
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
