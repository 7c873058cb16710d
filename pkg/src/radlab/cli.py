"""Command-line driver: closure-tables, stability-check, simulate, limit, converge.

Every run reads an optional JSON config, validates it against a fixed schema,
writes the effective config next to its outputs and exits with 0 on success,
1 on a scientific failure and 2 on a usage error.
"""

import argparse
import copy
import dataclasses
import json
import os
import sys

import jsonschema
import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": {"type": "number", "exclusiveMinimum": 1},
                "planck_exponent": {"type": "number", "minimum": 0},
                "planck_scale": {"type": "number", "minimum": 0},
                "sigma_a": _POS,
                "sigma_s": _POS,
                "N": {"type": "integer", "minimum": 2, "maximum": 8},
                "alpha_max": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "epsilon0": _POS,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.9},
                "splitting": {"enum": ["lie", "strang"]},
                "newton_tol": _POS,
                "newton_max_iter": {"type": "integer", "minimum": 1},
                "parabolic_cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                "cells": {"type": "integer", "minimum": 8},
                "tfinal": _POS,
                "length": _POS,
                "eps": _POS,
                "snapshot_every": {"type": "integer", "minimum": 0},
            },
        },
        "study": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_list": {"type": "array", "items": _POS, "minItems": 2},
                "profile": {"enum": ["sine", "sine_flow"]},
                "amplitude": {"type": "number", "minimum": 0, "maximum": 0.5},
                "prepared": {"type": "boolean"},
                "corrector": {"type": "boolean"},
                "guard": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
                "n_states": {"type": "integer", "minimum": 1},
                "n_offeq": {"type": "integer", "minimum": 0},
                "Ns": {"type": "array", "items": {"type": "integer", "minimum": 2, "maximum": 8},
                       "minItems": 1},
                "alphas": {"type": "array", "items": _NUM, "minItems": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string", "minLength": 1}},
        },
    },
}

DEFAULTS = {
    "model": {
        "gamma": 5.0 / 3.0,
        "planck_exponent": 4.0,
        "planck_scale": 1.0,
        "sigma_a": 1.0,
        "sigma_s": 1.0,
        "N": 3,
        "alpha_max": 0.95,
        "epsilon0": 0.5,
    },
    "solver": {
        "cfl": 0.8,
        "splitting": "lie",
        "newton_tol": 1e-12,
        "newton_max_iter": 30,
        "parabolic_cfl": 0.4,
        "cells": 256,
        "tfinal": 0.1,
        "length": 1.0,
        "eps": 0.1,
        "snapshot_every": 0,
    },
    "study": {
        "eps_list": [0.2, 0.1, 0.05, 0.025],
        "profile": "sine",
        "amplitude": 0.1,
        "prepared": True,
        "corrector": True,
        "guard": True,
        "seed": 0,
        "n_states": 100,
        "n_offeq": 100,
        "Ns": [2, 3, 4],
        "alphas": [-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9],
    },
    "output": {"dir": "radlab_out"},
}


class ConfigError(ValueError):
    """Config violates the schema; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _path(err):
    return ".".join(str(p) for p in err.absolute_path)


def validate_config(raw):
    """Merge ``raw`` over the defaults after schema and consistency checks."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(_path(err), err.message) from None
    cfg = copy.deepcopy(DEFAULTS)
    for block, vals in raw.items():
        cfg[block].update(vals)
    eps = cfg["study"]["eps_list"]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("study.eps_list", "must be strictly decreasing")
    if cfg["model"]["alpha_max"] > 0.95:
        raise ConfigError("model.alpha_max", "quadrature is only certified up to 0.95")
    bad = [a for a in cfg["study"]["alphas"] if abs(a) > cfg["model"]["alpha_max"]]
    if bad:
        raise ConfigError("study.alphas", f"values {bad} exceed alpha_max")
    return cfg


def parse_config(path):
    """Load and validate a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return validate_config({})
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError("", f"cannot read config {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ConfigError("", f"malformed JSON in {path}: {err}") from None
    return validate_config(raw)


def build_model(cfg):
    from .model import ThermoRadiationModel

    return ThermoRadiationModel(**cfg["model"])


def build_solver_config(cfg):
    from .solver import SolverConfig

    s = cfg["solver"]
    return SolverConfig(cfl=s["cfl"], newton_tol=s["newton_tol"], newton_max_iter=s["newton_max_iter"],
                        splitting=s["splitting"], snapshot_every=s["snapshot_every"],
                        parabolic_cfl=s["parabolic_cfl"])


# ---------------------------------------------------------------- output

def fmt(v):
    """17 significant digits, so CSVs round-trip and are byte-stable."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(fmt(v) for v in r) + "\n")
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror}") from None
    return path


def echo_config(cfg, out):
    path = os.path.join(out, "effective_config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def snapshot_columns(N):
    return ["x", "rho", "v", "E", "theta", "f0", "alpha"] + [f"f{i}" for i in range(2, N + 1)]


def snapshot_rows(state, model):
    """Rows (x, rho, v, E, theta, f0, alpha, f2..fN) for a full field."""
    U = state.U
    rho = U[:, 0]
    v = U[:, 1] / rho
    E = U[:, 2] / rho
    theta = model.theta(U[:, :3])
    return np.column_stack([state.grid.x, rho, v, E, theta, U[:, 3:]])


def _outdir(args, cfg):
    out = args.out or cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    cfg["output"]["dir"] = out
    return out


# ---------------------------------------------------------------- commands

def cmd_closure_tables(args, cfg):
    from .closure import closure_tables

    model = build_model(cfg)
    alphas = args.alphas if args.alphas is not None else cfg["study"]["alphas"]
    N = args.N or model.N
    out = _outdir(args, cfg)
    echo_config(cfg, out)
    rows = []
    for a in alphas:
        t = closure_tables(float(a), N, alpha_max=model.alpha_max)
        for name in ("kappa", "kappa_tilde", "dkappa", "M_tilde", "dproj"):
            M = np.asarray(getattr(t, name))
            for i in range(M.shape[0]):
                for j in range(M.shape[1]):
                    rows.append((a, name, i, j, M[i, j]))
        for i, r in enumerate(t.R):
            rows.append((a, "R", i, 0, r))
        for i, b in enumerate(t.beta):
            rows.append((a, "beta", i, 0, b))
    path = write_csv(os.path.join(out, "closure_tables.csv"), ["alpha", "name", "i", "j", "value"], rows)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_stability_check(args, cfg):
    from .stability import StateRecord, run_stability_sweep

    model = build_model(cfg)
    st = cfg["study"]
    out = _outdir(args, cfg)
    echo_config(cfg, out)
    report = run_stability_sweep(seed=st["seed"], n_states=st["n_states"], Ns=tuple(st["Ns"]),
                                 model=model, n_offeq=st["n_offeq"])
    names = [f.name for f in dataclasses.fields(StateRecord)]
    rows = [[getattr(r, n) for n in names] + [r.passed] for r in report.records]
    write_csv(os.path.join(out, "stability.csv"), names + ["passed"], rows)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_simulate(args, cfg):
    from .limit import initial_field
    from .solver import Grid1D, run

    s, st = cfg["solver"], cfg["study"]
    if args.eps is not None:
        s["eps"] = args.eps
    if args.cells is not None:
        s["cells"] = args.cells
    if args.tfinal is not None:
        s["tfinal"] = args.tfinal
    if not s["eps"] > 0:
        raise ConfigError("solver.eps", "eps must be positive; eps = 0 is handled by the limit command")
    if s["eps"] > cfg["model"]["epsilon0"]:
        raise ConfigError("solver.eps", "eps exceeds model.epsilon0")
    if s["cells"] < 8:
        raise ConfigError("solver.cells", "at least 8 cells are required")
    if not s["tfinal"] > 0:
        raise ConfigError("solver.tfinal", "final time must be positive")
    model = build_model(cfg)
    conf = build_solver_config(cfg)
    out = _outdir(args, cfg)
    echo_config(cfg, out)
    grid = Grid1D(s["cells"], s["length"])
    init = initial_field(grid, s["eps"], st["profile"], st["amplitude"], st["prepared"],
                         st["corrector"], model)
    art = run(init, s["tfinal"], conf, model)
    cols = snapshot_columns(model.N)
    snaps = [init] + list(art.snapshots[1:] if conf.snapshot_every else []) + [art.final]
    for k, snap in enumerate(snaps):
        write_csv(os.path.join(out, f"snapshot_{k:04d}.csv"), cols, snapshot_rows(snap, model))
    write_csv(os.path.join(out, "integrals.csv"), ["t", "mass", "momentum", "energy"],
              zip(art.times, art.mass, art.momentum, art.energy))
    drift = art.mass_drift
    print(f"steps={art.steps} t={art.final.t:.17g} mass_drift={drift:.3e}")
    if drift > 1e-12:
        print("FAIL mass conservation", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_limit(args, cfg):
    from .limit import initial_field, limit_field_from_full, limit_run
    from .solver import Grid1D

    s, st = cfg["solver"], cfg["study"]
    if args.cells is not None:
        s["cells"] = args.cells
    if args.tfinal is not None:
        s["tfinal"] = args.tfinal
    model = build_model(cfg)
    out = _outdir(args, cfg)
    echo_config(cfg, out)
    grid = Grid1D(s["cells"], s["length"])
    init = limit_field_from_full(initial_field(grid, s["eps"], st["profile"], st["amplitude"],
                                               True, False, model), model)
    traj = limit_run(init, s["tfinal"], cfl=s["cfl"], parabolic_cfl=s["parabolic_cfl"], model=model)
    f = traj.final
    q = f.q
    theta = f.theta(model)
    b = model.planck(theta)
    rows = np.column_stack([grid.x, q[:, 0], q[:, 1] / q[:, 0], (q[:, 2] - b) / q[:, 0], theta, q[:, 2]])
    write_csv(os.path.join(out, "limit_final.csv"), ["x", "rho", "v", "E", "theta", "Z"], rows)
    I = np.asarray(traj.integrals)
    write_csv(os.path.join(out, "limit_integrals.csv"), ["t", "mass", "momentum", "Z"],
              np.column_stack([traj.times, I]))
    drift = float(np.max(np.abs(I - I[0]) / np.maximum(np.abs(I[0]), 1.0)))
    print(f"steps={traj.steps} t={f.t:.17g} integral_drift={drift:.3e}")
    return EXIT_OK if drift <= 1e-12 else EXIT_FAIL


def cmd_converge(args, cfg):
    from .limit import convergence_study

    s, st = cfg["solver"], cfg["study"]
    if args.cells is not None:
        s["cells"] = args.cells
    if args.tfinal is not None:
        s["tfinal"] = args.tfinal
    if not st["prepared"]:
        raise ConfigError("study.prepared", "the convergence study needs well-prepared data")
    model = build_model(cfg)
    out = _outdir(args, cfg)
    echo_config(cfg, out)
    res = convergence_study(st["eps_list"], M=s["cells"], T=s["tfinal"], L=s["length"],
                            profile=st["profile"], amplitude=st["amplitude"], corrector=st["corrector"],
                            config=build_solver_config(cfg), model=model, guard=st["guard"])
    write_csv(os.path.join(out, "convergence.csv"), ["eps", "err_L2", "err_H1", "order_pairwise"], res.rows())
    dat = os.path.join(out, "convergence.dat")
    with open(dat, "w", encoding="utf-8") as fh:
        fh.write("# log(eps) log(err_L2) log(err_H1)\n")
        for e, a, b in zip(res.eps, res.err_L2, res.err_H1):
            fh.write(f"{fmt(np.log(e))} {fmt(np.log(a))} {fmt(np.log(b))}\n")
        fh.write(f"# global order L2 = {fmt(res.order_L2)} H1 = {fmt(res.order_H1)}\n")
    for r in res.rows():
        print(" ".join(fmt(v) for v in r))
    print(f"order L2={res.order_L2:.4f} H1={res.order_H1:.4f} monotone={res.monotone} "
          f"guard_change={res.guard_change:.3e}")
    if res.inconclusive:
        print("INCONCLUSIVE grid-doubling guard tripped; no order reported", file=sys.stderr)
        return EXIT_FAIL
    ok = res.monotone and res.order_L2 >= 0.8 and res.order_H1 >= 0.8
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "closure-tables": cmd_closure_tables,
    "stability-check": cmd_stability_check,
    "simulate": cmd_simulate,
    "limit": cmd_limit,
    "converge": cmd_converge,
}


def _alpha_list(text):
    try:
        return [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser():
    p = argparse.ArgumentParser(prog="radlab", description="Radiation hydrodynamics moment models.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH", help="JSON config file")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        if name in ("simulate", "limit", "converge"):
            sp.add_argument("--cells", type=int, metavar="M")
            sp.add_argument("--tfinal", type=float, metavar="T")
        if name == "simulate":
            sp.add_argument("--eps", type=float, metavar="VALUE")
        if name == "closure-tables":
            sp.add_argument("--alphas", type=_alpha_list, metavar="A1,A2,...")
            sp.add_argument("--N", type=int, choices=range(1, 9), metavar="N")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = parse_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as err:
        print(f"radlab: config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"radlab: {err}", file=sys.stderr)
        return EXIT_FAIL
    except (ArithmeticError, RuntimeError, ValueError) as err:
        print(f"radlab: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
