"""Command-line experiment runner.

Each command writes its results plus ``manifest.json`` (config hash, seed,
versions) and ``runtime.json`` (wall time). Result files and manifests depend
only on the configuration and seed, never on ``--workers``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Callable

import numpy as np

from . import emergence as em
from . import rng as rngmod
from . import sim_continuous as sc
from . import sim_discrete as sd
from .lattice import LawError, mean_report
from .models import load_chain, load_model
from .mutation_law import mutation_law, mutation_mean_report

VOLATILE = {"workers", "out", "func"}


class RunError(RuntimeError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _version(pkg: str) -> str:
    try:
        return metadata.version(pkg)
    except metadata.PackageNotFoundError:
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


class Outputs:
    """Single writer for one run directory."""

    def __init__(self, args: argparse.Namespace):
        self.dir = Path(args.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}
        self.config = {k: v for k, v in sorted(vars(args).items()) if k not in VOLATILE}

    def write(self, name: str, text: str):
        (self.dir / name).write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def finish(self, seconds: float):
        cfg = _dump_json(self.config)
        manifest = {
            "config": self.config,
            "config_hash": hashlib.sha256(cfg.encode()).hexdigest(),
            "seed": self.config.get("seed"),
            "files": self.files,
            "versions": {"mutforest": _version("artifact"), "numpy": np.__version__,
                         "scipy": _version("scipy"), "numba": _version("numba"),
                         "networkx": _version("networkx"),
                         "python": platform.python_version()},
        }
        (self.dir / "manifest.json").write_text(_dump_json(manifest))
        (self.dir / "runtime.json").write_text(_dump_json({"seconds": round(seconds, 3)}))


# ------------------------------------------------------------------ commands

def cmd_mutation_law(args, out: Outputs):
    nu = load_model(args.model)
    mu = mutation_law(nu, eps=args.eps)
    rows = []
    for i, t in enumerate(mu.types):
        for k, p in sorted(t.pmf.entries.items()):
            rows.append([i, *k, float(p)])
    d = nu.dim
    out.write("mutation_law.csv", _csv(["type"] + [f"k{j}" for j in range(d)] + ["p"], rows))
    rep = mean_report(nu)
    rbar = mutation_mean_report(rep)
    out.write("mutation_means.csv", _csv(["i", "j", "m", "mbar", "infinite"],
                                         [[i, j, float(rep.mean_matrix[i, j]),
                                           float(rbar.matrix[i, j]), bool(rbar.infinite[i, j])]
                                          for i in range(d) for j in range(d)]))
    out.write("mutation_law.json", _dump_json({
        "types": [{"mode": t.mode, "truncation_error": t.truncation_error,
                   "support_error": t.support_error, "terms": t.terms, "converged": t.converged}
                  for t in mu.types],
        "spectral_radius": rep.spectral_radius, "criticality": rep.criticality,
        "mutation_spectral_radius": rbar.spectral_radius,
        "mutation_criticality": rbar.criticality,
    }))


def cmd_simulate_discrete(args, out: Outputs):
    nu = load_model(args.model)
    cfg = sd.SampleConfig(nu, args.x, args.budget, args.reps, args.seed)
    b = sd.sample_censuses(cfg, args.engine, args.workers)
    d = nu.dim
    off = [(i, j) for i in range(d) for j in range(d) if i != j]
    rows = ([r, *b.N[r], *(b.M_matrix[r, i, j] for i, j in off), bool(b.censored[r])]
            for r in range(len(b)))
    out.write("censuses.csv", _csv(["replicate"] + [f"N{i}" for i in range(d)]
                                   + [f"M{i}{j}" for i, j in off] + ["censored"], rows))


def cmd_direction(args, out: Outputs):
    nu = load_model(args.model)
    e = sd.direction_asymptotics(nu, args.direction, args.scales, args.reps, args.seed,
                                 args.budget, args.workers)
    out.write("direction.csv", _csv(
        ["scale", "type", "quantity", "estimate", "se", "replicates", "censored",
         "target", "alt_target"],
        [[r.scale, r.type, r.quantity, r.estimate, r.se, r.replicates, r.censored,
          "" if r.target is None else float(r.target),
          "" if r.alt_target is None else float(r.alt_target)] for r in e.rows]))


def cmd_simulate_ct(args, out: Outputs):
    nu = load_model(args.model)
    rates = args.rates or nu.rates or (1.0,) * nu.dim
    if args.grid:
        b = sc.observe(nu, rates, args.x, args.grid, args.reps, args.seed, args.engine,
                       args.budget, args.workers)
        d = nu.dim
        rows = []
        for r in range(len(b.status)):
            for g, t in enumerate(b.t_grid):
                valid = g < b.n_valid[r]
                rows.append([r, float(t), *b.z[r, g], *b.mutations[r, g],
                             sc.STATUS[int(b.status[r])], valid])
        out.write("observations.csv", _csv(["replicate", "t"] + [f"Z{i}" for i in range(d)]
                                           + [f"M{i}" for i in range(d)] + ["status", "valid"],
                                           rows))
    else:
        g = rngmod.generator(args.seed, f"simulate-ct-{args.engine}")
        sim = sc.simulate_lamperti if args.engine == "lamperti" else sc.simulate_direct
        tr = sim(nu, rates, args.x, args.horizon, g, args.budget)
        if tr.decomposition_residual() != 0:
            raise RunError("invariant violated: Z^(j) != sum_i Z^{i,j}")
        out.write("trajectory.csv", tr.to_csv())


def cmd_growth(args, out: Outputs):
    nu = load_model(args.model)
    rates = args.rates or nu.rates or (1.0,) * nu.dim
    rep = sc.supercritical_growth(nu, rates, args.x, args.grid, args.reps, args.seed,
                                  args.engine, args.budget, args.workers)
    out.write("growth.json", _dump_json(rep.to_dict()))


def cmd_emergence(args, out: Outputs):
    what = args.what
    if what == "ladder":
        if not args.ladder:
            raise ValueError("emergence ladder needs --ladder")
        rungs = json.loads(Path(args.ladder).read_text())
        models = [em.binary_fission_chain([tuple(p) for p in rung]) for rung in rungs]
        rep = em.ratio_convergence(models, args.target, args.reps, args.seed, workers=args.workers)
        rows = []
        for n, r in enumerate(rep.rungs):
            for dl in sorted(r.exceed):
                rows.append([n, ";".join(repr(x) for x in r.ratios), "exceed", dl,
                             r.exceed[dl], r.exceed_se[dl]])
            for k, p in sorted(r.single_birth.items()):
                rows.append([n, ";".join(repr(x) for x in r.ratios), "single_birth", k, p, ""])
            rows.append([n, ";".join(repr(x) for x in r.ratios), "mean_tau", "", r.mean_tau,
                         r.mean_tau_se])
            rows.append([n, ";".join(repr(x) for x in r.ratios), "mean_theta_sum", "",
                         r.mean_theta_sum, ""])
        out.write("ladder.csv", _csv(["rung", "ratios", "quantity", "param", "value", "se"], rows))
        return
    if not args.model:
        raise ValueError("emergence needs --model")
    model = load_chain(args.model)
    i = args.target
    if what == "tau":
        d = em.sample_tau_direct(model, i, args.reps, args.seed, args.horizon,
                                 workers=args.workers)
        r = em.sample_tau_representation(model, i, args.reps, args.seed + 1, workers=args.workers)
        out.write("tau.csv", _csv(["replicate", "route", "tau", "censored"],
                                  [[n, "direct", float(v), bool(c)]
                                   for n, (v, c) in enumerate(zip(d.values, d.censored))]
                                  + [[n, "representation", float(v), bool(c)]
                                     for n, (v, c) in enumerate(zip(r.values, r.censored))]))
    elif what == "theta":
        th = em.sample_theta(model, i, args.reps, args.seed, args.workers)
        out.write("theta.csv", _csv(["replicate", "theta"], [[n, float(v)] for n, v in enumerate(th)]))
    elif what == "bound":
        grid = args.grid or tuple(np.linspace(0.0, 3.0, 20))
        b = em.bound_check(model, i, grid, args.reps, args.seed, args.workers)
        out.write("bound.csv", _csv(["t", "tau_survival", "theta_survival", "joint_se"],
                                    zip(b.grid, b.tau_survival, b.theta_survival, b.joint_se)))
        if not b.holds:
            raise RunError("invariant violated: survival bound exceeded by more than 3 SE")
    elif what == "laplace":
        alphas = args.grid or (0.0, 0.5, 1.0, 2.0)
        rows = []
        for a in alphas:
            for form in ("corrected", "printed"):
                v = em.laplace_tau(model, i, a, form=form)
                rows.append([a, form, v.value, v.tail_bound, v.terms, v.converged])
        out.write("laplace.csv", _csv(["alpha", "form", "value", "tail_bound", "terms",
                                       "converged"], rows))
    elif what == "expectation":
        rep = em.expected_tau(model, i)
        out.write("expectation.json", _dump_json(rep.__dict__))


COMMANDS: dict[str, Callable] = {
    "mutation-law": cmd_mutation_law,
    "simulate-discrete": cmd_simulate_discrete,
    "direction-asymptotics": cmd_direction,
    "simulate-ct": cmd_simulate_ct,
    "growth": cmd_growth,
    "emergence": cmd_emergence,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="builtin name (diamond, triangle, critical), JSON path, "
                                        "or bf:a,b;a,b for a binary-fission chain")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--reps", type=int, default=1000)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", default="out")
    common.add_argument("--eps", type=float, default=1e-10)
    common.add_argument("--horizon", type=float, default=None)
    common.add_argument("--budget", type=int, default=None)

    p = argparse.ArgumentParser(prog="mutforest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("mutation-law", parents=[common])
    s = sub.add_parser("simulate-discrete", parents=[common])
    s.add_argument("--x", type=_ints, default=(1, 0))
    s.add_argument("--engine", choices=("walk", "forest"), default="walk")
    s = sub.add_parser("direction-asymptotics", parents=[common])
    s.add_argument("--direction", type=_ints, default=(1, 0))
    s.add_argument("--scales", type=_ints, default=(50, 100, 200))
    for name in ("simulate-ct", "growth"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--x", type=_ints, default=(1, 0))
        s.add_argument("--rates", type=_floats, default=None)
        s.add_argument("--engine", choices=sc.ENGINES, default="direct")
        s.add_argument("--grid", type=_floats, default=None if name == "simulate-ct"
                       else (5.0, 10.0, 12.0))
    s = sub.add_parser("emergence", parents=[common])
    s.add_argument("what", choices=("tau", "theta", "bound", "ladder", "laplace", "expectation"))
    s.add_argument("--target", type=int, default=1, help="zero-based target type")
    s.add_argument("--grid", type=_floats, default=None)
    s.add_argument("--ladder", default=None, help="JSON list of rungs, each a list of rate pairs")
    return p


def _defaults(args):
    if args.budget is None:
        args.budget = sc.DEFAULT_CAP if args.command in ("simulate-ct", "growth") else sd.DEFAULT_BUDGET
    if args.command == "simulate-ct" and args.horizon is None:
        args.horizon = 5.0


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _defaults(args)
    if args.command != "emergence" and not args.model:
        print(f"error: invalid config: {args.command} needs --model", file=sys.stderr)
        return 2
    out = Outputs(args)
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command](args, out)
    except LawError as e:
        print(f"error: model validation failed: {e}", file=sys.stderr)
        return 3
    except (RunError, sd.ExperimentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return 2
    out.finish(time.perf_counter() - t0)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
