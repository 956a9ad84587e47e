"""Command line entry points: ``pdrb greedy|online|validate|convergence|export-vtk``.

Exit codes: 0 success, 1 runtime failure (missing files, solver errors),
2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels, greedy, rb, vtk
from .convergence import manufactured_study
from .mesh import write_mesh
from .problem import BOX, Discretization, Parameter, lshape_problem, manufactured_problem

log = logging.getLogger("pdrb")


class ConfigError(ValueError):
    pass


# section -> key -> (type, default).  Defaults are documented in the README.
SCHEMA = {
    "problem": {"domain": (str, "lshape"), "uniform_levels": (int, 12),
                "initial_levels": (int, 6)},
    "parameters": {"box_min": (float, BOX[0]), "box_max": (float, BOX[1])},
    "greedy": {"algorithm": (str, "fixed"), "train_size": (int, 100_000),
               "train_seed": (int, 0), "eps_h0": (float, 0.08), "eps_rb0": (float, 1e-3),
               "r_rbfe": (float, 2.0), "n_max": (int, 20), "dof_max": (int, None),
               "dof_measure": (str, "max"),
               "theta": (float, 0.5), "mu_1": (str, "0 0"), "saturation": (bool, True),
               "max_afem_steps": (int, 80), "validate_samples": (int, 0),
               "validate_seed": (int, 12345)},
    "solver": {"backend": (str, None), "threads": (int, None)},
    "output": {"directory": (str, "pdrb_out"), "vtk": (bool, False)},
}


def _convert(kind, raw, key):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if raw.strip().lower() in ("", "none"):
            return None
        if kind is int:
            return int(float(raw))
        return kind(raw)
    except ValueError as exc:
        raise ConfigError("bad value for %s: %r" % (key, raw)) from exc


def load_config(path) -> dict:
    """Parse a RunConfig file into ``{section: {key: value}}`` with defaults filled."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError("cannot parse %s: %s" % (path, exc)) from exc
    out = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError("unknown section [%s]" % sec)
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError("unknown key '%s' in [%s]" % (key, sec))
            out[sec][key] = _convert(SCHEMA[sec][key][0], raw, "%s.%s" % (sec, key))
    return out


def greedy_config(cfg: dict) -> greedy.GreedyConfig:
    g = dict(cfg["greedy"])
    g["mu_1"] = tuple(float(x) for x in str(g["mu_1"]).replace(",", " ").split())
    g["domain"] = cfg["problem"]["domain"]
    g["uniform_levels"] = cfg["problem"]["uniform_levels"]
    g["initial_levels"] = cfg["problem"]["initial_levels"]
    g["box"] = (cfg["parameters"]["box_min"], cfg["parameters"]["box_max"])
    g["backend"] = cfg["solver"]["backend"]
    known = {f.name for f in fields(greedy.GreedyConfig)}
    try:
        return greedy.GreedyConfig(**{k: v for k, v in g.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def problem_data(domain: str):
    if domain == "lshape":
        return lshape_problem()
    if domain == "unit_square":
        return manufactured_problem()
    raise ConfigError("unknown domain %r" % domain)


def _threads(arg):
    n = arg
    if n is None and os.environ.get("PDRB_THREADS"):
        n = int(os.environ["PDRB_THREADS"])
    if n is not None:
        if n < 1:
            raise ConfigError("thread count must be positive")
        _kernels.set_threads(n)
    return n


def _load(path):
    p = Path(path)
    if not p.is_file():
        print("error: model file %s not found" % p, file=sys.stderr)
        return None
    return rb.load_model(p)


# --- commands ----------------------------------------------------------------


def cmd_greedy(args) -> int:
    cfg = load_config(args.config)
    _threads(args.threads if args.threads is not None else cfg["solver"]["threads"])
    gc = greedy_config(cfg)
    out = Path(args.output or cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    data = problem_data(gc.domain)
    t = time.perf_counter()
    res = greedy.run_greedy(gc, data=data)
    elapsed = time.perf_counter() - t
    model = replace(res.model, meta=dict(res.model.meta, domain=gc.domain))
    res.history.to_csv(out / "history.csv")
    rb.save_model(out / "model.npz", model, res.mesh)
    mesh_files = []
    for i, m in enumerate(res.history.meshes):
        if i and m is res.history.meshes[i - 1]:
            continue
        name = "mesh_%02d.txt" % (i + 1)
        write_mesh(m, out / name)
        mesh_files.append(name)
    if cfg["output"]["vtk"]:
        for mu, u, s in res.snapshots:
            tag = "snap_%+.3f_%+.3f" % tuple(mu)
            vtk.write_vtk(out / (tag + ".vtk"), res.disc.spaces, {"u": u}, {"sigma": s})
    manifest = {
        "config": {k: {kk: vv for kk, vv in v.items()} for k, v in cfg.items()},
        "seed": res.history.seed, "generator": res.history.generator,
        "reason": res.history.reason, "timings": res.history.timings,
        "elapsed": elapsed, "mesh_files": mesh_files, "backend": _kernels.BACKEND,
        "versions": {"pdrb": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    last = res.history.rows[-1]
    print("N=%d maxerror=%.6g eps_rb=%.6g reason=%s -> %s"
          % (last.n, last.maxerror, last.eps_rb, res.history.reason, out))
    return 0


def cmd_online(args) -> int:
    loaded = _load(args.model)
    if loaded is None:
        return 1
    model, mesh = loaded
    p = Parameter(args.mu1, args.mu2)
    if not p.in_box():
        log.warning("mu=(%g, %g) lies outside the training box %s; evaluating anyway",
                    p.mu1, p.mu2, BOX)
    sol = rb.online_solve(model, p.as_array())
    print("c = " + " ".join("%.12g" % x for x in sol.c))
    print("d = " + " ".join("%.12g" % x for x in sol.d))
    print("eta_rb = %.12g" % sol.eta_rb)
    if args.vtk:
        if mesh is None:
            print("error: model file carries no mesh", file=sys.stderr)
            return 1
        disc = Discretization(mesh, problem_data(model.meta.get("domain", "lshape")))
        u, s = rb.reconstruct(model, sol, disc)
        vtk.write_vtk(args.vtk, disc.spaces, {"u_rb": u}, {"sigma_rb": s})
    return 0


def cmd_validate(args) -> int:
    if args.n < 1:
        raise ConfigError("n must be positive")
    _threads(args.threads)
    loaded = _load(args.model)
    if loaded is None:
        return 1
    model, _ = loaded
    mx, mean, vals = greedy.validate_random(model, args.n, args.seed)
    print("test error: max=%.6g mean=%.6g (n=%d, seed=%d)" % (mx, mean, args.n, args.seed))
    mus = greedy.make_training_set(args.n, args.seed, BOX)
    out = Path(args.output) if args.output else Path(args.model).with_name("validate.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu1", "mu2", "eta_rb"])
        for m, v in zip(mus, vals):
            w.writerow(["%.6g" % m[0], "%.6g" % m[1], "%.6g" % v])
    return 0


def cmd_convergence(args) -> int:
    if args.problem != "unit_square":
        raise ConfigError("only the unit_square manufactured problem has an exact solution")
    study = manufactured_study(args.n0, args.levels)
    print(study.table())
    return 0


def cmd_export_vtk(args) -> int:
    loaded = _load(args.model)
    if loaded is None:
        return 1
    model, mesh = loaded
    if mesh is None or model.snap_u is None:
        print("error: model file carries no mesh or snapshots", file=sys.stderr)
        return 1
    disc = Discretization(mesh, problem_data(model.meta.get("domain", "lshape")))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, mu in enumerate(model.mus):
        sol = rb.online_solve(model, mu)
        u, s = rb.reconstruct(model, sol, disc)
        vtk.write_vtk(out / ("snap_%02d.vtk" % (i + 1)), disc.spaces, {"u": u}, {"sigma": s})
    print("wrote %d files to %s" % (len(model.mus), out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdrb", description="Primal-dual reduced basis toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("greedy", help="run a greedy training")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_greedy)

    p = sub.add_parser("online", help="evaluate a model at one parameter")
    p.add_argument("model")
    p.add_argument("mu1", type=float)
    p.add_argument("mu2", type=float)
    p.add_argument("--vtk", help="write reconstructed fields here")
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("validate", help="random online test errors")
    p.add_argument("model")
    p.add_argument("-n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("-o", "--output")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("convergence", help="manufactured-solution refinement study")
    p.add_argument("problem", nargs="?", default="unit_square")
    p.add_argument("--n0", type=int, default=4)
    p.add_argument("--levels", type=int, default=6)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("export-vtk", help="write snapshot fields of a model")
    p.add_argument("model")
    p.add_argument("-o", "--output", default="vtk")
    p.set_defaults(func=cmd_export_vtk)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (rb.ModelFormatError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # solver failures
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
