"""Configuration-driven experiment runner.

Usage:
    heteroflow run --triple triples/b05.json --check all --out results/
    heteroflow run --triple triples/b05.json --sweep 0.2,0.1,0.05,0.025 \
        --check convergence --out results/
    heteroflow describe --triple triples/b05.json --sweep 0.05 --nu 0.25

Exit codes: 0 all selected checks pass, 1 a check failed, 2 usage or
configuration error, 3 solver error.  With a fixed seed the CSV bodies are
byte-identical between runs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys as _sys

import numpy as np

from . import checks, conley, model, operators, solver, verify

SCHEMA_VERSION = 1

USAGE_ERROR, CHECK_FAILURE, SOLVER_ERROR = 2, 1, 3


class ConfigError(Exception):
    pass


def _parse_sweep(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep list {text!r}") from exc
    if not vals or any(not 0.0 < v < 1.0 for v in vals):
        raise ConfigError("sweep values must lie in (0, 1) and be non-empty")
    return sorted(vals, reverse=True)


def _load_config(args) -> dict:
    cfg = {"schema_version": SCHEMA_VERSION, "triple": None, "eps_list": None,
           "nu": 0.25, "grid": {}, "checks": [], "out": "results",
           "seed": 0}
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config, "r", encoding="utf-8") as fh:
            body = json.load(fh)
        if body.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {body.get('schema_version')}")
        cfg.update({k: v for k, v in body.items() if k in cfg})
    if args.triple:
        cfg["triple"] = args.triple
    if args.sweep:
        cfg["eps_list"] = _parse_sweep(args.sweep)
    if args.nu is not None:
        cfg["nu"] = args.nu
    if args.grid_T is not None:
        cfg["grid"]["T"] = args.grid_T
    if args.grid_m is not None:
        cfg["grid"]["m"] = args.grid_m
    if getattr(args, "check", None):
        names = []
        for chunk in args.check:
            names.extend(c.strip() for c in chunk.split(",") if c.strip())
        cfg["checks"] = names
    if args.out:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed

    if not 0.0 < cfg["nu"] < 0.5:
        raise ConfigError(f"nu must lie in (0, 1/2), got {cfg['nu']}")
    if cfg["triple"] is None:
        raise ConfigError("no triple given (use --triple <path>)")
    if isinstance(cfg["triple"], str) and not os.path.exists(cfg["triple"]):
        raise ConfigError(f"triple file not found: {cfg['triple']}")
    bad = [c for c in cfg["checks"]
           if c != "all" and c not in checks.ALL_CHECKS]
    if bad:
        raise ConfigError(f"unknown checks {bad}; known: {sorted(checks.ALL_CHECKS)}")
    return cfg


def _resolve_triple(cfg) -> model.ProblemTriple:
    spec = cfg["triple"]
    if isinstance(spec, dict):
        return model.triple_from_json(json.dumps(spec))
    return model.load_triple(spec)


def _selected(cfg):
    names = cfg["checks"]
    if not names:
        return []
    if "all" in names:
        return list(checks.ALL_CHECKS)
    return names


def _check_kwargs(name: str, cfg) -> dict:
    """Map config onto each check's parameters; sweep overrides the eps
    choices, grid overrides the node counts where they apply."""
    sweep = cfg["eps_list"]
    gm = cfg["grid"].get("m")
    kw = {}
    if name in ("trivial", "convergence"):
        if sweep:
            kw["eps_list"] = sweep
    elif name in ("operators", "transversality"):
        if sweep:
            kw["eps_list"] = sweep
        if gm:
            kw["m"] = gm
    elif name in ("energy", "uniqueness"):
        if sweep:
            kw["eps"] = min(sweep)
        if gm:
            kw["m"] = gm
    elif name in ("decay", "slice_shift"):
        if sweep:
            kw["eps"] = min(sweep)
    elif name == "conley":
        if sweep:
            kw["eps"] = min(sweep)
            kw["eps_sweep"] = sweep
        kw["nu"] = cfg["nu"]
        kw["seed"] = 31415 + cfg["seed"]
    if name in ("operators", "uniqueness"):
        kw["seed"] = {"operators": 20240, "uniqueness": 2718}[name] + cfg["seed"]
    return kw


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _dump_solution(triple, cfg, out_dir):
    """Plot-ready samples (t, x..., z) of one converged orbit."""
    eps = min(cfg["eps_list"]) if cfg["eps_list"] else 0.05
    grid = verify.default_solve_grid(triple, eps, T=cfg["grid"].get("T"),
                                     m=cfg["grid"].get("m"))
    sol = solver.newton_solve(triple, eps, grid)
    head = ["t"] + [f"x{i}" for i in range(triple.n - 1)] + ["z"]
    rows = np.column_stack([grid.times(), sol.gamma.values])
    _write_csv(os.path.join(out_dir, "solution.csv"), head, rows)


def run(cfg) -> int:
    triple = _resolve_triple(cfg)
    names = _selected(cfg)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    if not names:
        print("no experiments selected")
        return 0
    summary = {"schema_version": SCHEMA_VERSION, "seed": cfg["seed"],
               "nu": cfg["nu"], "checks": {}}
    any_failed = False
    for name in names:
        result = checks.ALL_CHECKS[name](triple, **_check_kwargs(name, cfg))
        summary["checks"][name] = {"passed": bool(result.passed),
                                   "details": _jsonable(result.details)}
        for tname, (header, rows) in result.tables.items():
            _write_csv(os.path.join(out_dir, f"{tname}.csv"), header, rows)
        status = "PASS" if result.passed else "FAIL"
        print(f"[{status}] {name}  ({result.runtime:.1f}s)")
        any_failed = any_failed or not result.passed
    _dump_solution(triple, cfg, out_dir)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"reports written to {out_dir}/")
    return CHECK_FAILURE if any_failed else 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def describe(cfg) -> int:
    triple = _resolve_triple(cfg)
    names = _selected(cfg)
    eps_list = cfg["eps_list"] or [0.05]
    K = conley.K_constant(triple.b)
    print(f"triple: n = {triple.n}, |b| = {np.linalg.norm(triple.b):.6g}, "
          f"h = {triple.h.config()['kind']}")
    print(f"K = {K:.6g}   (closed form at |b| = 0: {conley.K_constant([0.0]):.6g})")
    for eps in eps_list:
        grid = verify.default_solve_grid(triple, eps, T=cfg["grid"].get("T"),
                                         m=cfg["grid"].get("m"))
        cc = conley.ConleyConfig(triple, eps, nu=cfg["nu"])
        print(f"eps = {eps}: grid T = {grid.T:.6g}, m = {grid.m}, dt = {grid.dt:.3e}; "
              f"radii r_plus = {cc.r_plus:.6g}, r_minus_outer = {cc.r_minus_outer:.6g}")
    if names:
        print("selected checks:", ", ".join(names))
    else:
        print("no experiments selected")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heteroflow",
                                description="Heteroclinic-orbit laboratory runner")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, fn in (("run", run), ("describe", describe)):
        sp = sub.add_parser(cmd)
        sp.add_argument("--triple", help="path to a triple JSON document")
        sp.add_argument("--config", help="path to an experiment config JSON")
        sp.add_argument("--sweep", help="comma-separated eps list, e.g. 0.2,0.1,0.05")
        sp.add_argument("--nu", type=float, default=None,
                        help="radius exponent in (0, 1/2), default 0.25")
        sp.add_argument("--grid-T", dest="grid_T", type=float, default=None)
        sp.add_argument("--grid-m", dest="grid_m", type=int, default=None)
        sp.add_argument("--check", action="append", default=None,
                        help="check name or 'all' (repeatable / comma list)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except (ConfigError, json.JSONDecodeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return USAGE_ERROR
    try:
        return args.func(cfg)
    except (solver.NewtonDivergenceError, operators.SliceDivergenceError) as exc:
        print(f"solver error: {exc}", file=_sys.stderr)
        return SOLVER_ERROR
    except ValueError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
