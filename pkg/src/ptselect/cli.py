"""Command-line entry point ``ptselect``.

Subcommands::

    ptselect simulate CONFIG --eps-index K [--seed S] [--rep B] [--reps N] --out FIELD
    ptselect select FIELD --config CONFIG [--family NAME] [--x X1,X2] [--etable CSV] --out TRACE
    ptselect majorant CONFIG [--family NAME] [--eps-index K] [--reps N] [--seed S] --out ETABLE
    ptselect bench CONFIG [--out DIR] [--seed S] [--reps N] [--e-reps N] [--dry-run]
    ptselect verify [--quick] [--seed S]

``CONFIG`` is either a path to an INI file or the name of a bundled config
(``ptselect bench --list`` shows them).  Summaries are printed as JSON on
stdout; ``verify`` prints one PASS/FAIL line per check and exits with status
1 when any check fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bench import (
    ExperimentConfig,
    _json_default,
    build_theta,
    bundled_config,
    bundled_configs,
    dry_run,
    experiment_grid,
    load_config,
    run_experiment,
)
from .func_classes import make_function
from .linear_est import PairEngine
from .majorant import ETable, build_majorant, e_mc
from .selector import select
from .verify import run_checks
from .wgn_sim import read_field, sample_field, write_field

__all__ = ["main", "build_parser", "resolve_config"]


def resolve_config(ref: str) -> ExperimentConfig:
    """Load ``ref`` as a file path, falling back to the bundled configs."""
    path = Path(ref)
    if path.is_file():
        return load_config(path)
    try:
        return bundled_config(ref)
    except (KeyError, FileNotFoundError, ValueError):
        raise SystemExit(f"ptselect: {ref!r} is neither a config file nor a bundled config "
                         f"(bundled: {', '.join(sorted(bundled_configs()))})") from None


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))


def _eps_of(cfg: ExperimentConfig, index: Optional[int], value: Optional[float]) -> float:
    if value is not None:
        return float(value)
    k = 0 if index is None else index
    if not 0 <= k < len(cfg.eps):
        raise SystemExit(f"ptselect: eps index {k} outside 0..{len(cfg.eps) - 1}")
    return float(cfg.eps[k])


def _family(cfg: ExperimentConfig, name: Optional[str]):
    if name is None:
        return cfg.families[0]
    try:
        return cfg.family(name)
    except KeyError:
        raise SystemExit(f"ptselect: no family {name!r} in config (have {[f.name for f in cfg.families]})") from None


def _point(text: Optional[str], cfg: ExperimentConfig) -> np.ndarray:
    if text is None:
        return cfg.x_points()[0]
    vals = np.array([float(v) for v in text.split(",")])
    if vals.size != cfg.d:
        raise SystemExit(f"ptselect: --x needs {cfg.d} comma-separated coordinates")
    return vals


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = resolve_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    eps = _eps_of(cfg, args.eps_index, args.eps)
    F = make_function(cfg.function, **cfg.function_params)
    grid = experiment_grid(cfg)
    count = 1 if args.reps is None else args.reps
    out = Path(args.out)
    written = []
    if count > 1:
        out.mkdir(parents=True, exist_ok=True)
    for b in range(args.rep, args.rep + count):
        fld = sample_field(F, eps, grid, seed, b)
        path = out if count == 1 else out / f"field_rep{b}.bin"
        written.append(str(write_field(path, fld)))
    _emit({"eps": eps, "seed": seed, "replications": list(range(args.rep, args.rep + count)),
           "grid": {"d": grid.d, "n": grid.n, "margin": grid.margin, "spacing": grid.spacing},
           "function": F.tag, "files": written})
    return 0


def _selector_parts(cfg: ExperimentConfig, fc, eps: float, grid, e_reps: Optional[int], seed: int, etable: Optional[str]):
    theta = build_theta(fc, eps, cfg)
    engine = PairEngine(theta, grid)
    if etable is not None:
        table = ETable.from_csv(etable)
        if table.sigma.size != theta.levels.size or not np.allclose(table.sigma, theta.levels, rtol=1e-9):
            raise SystemExit(f"ptselect: {etable} does not match the variance levels of family {fc.name!r} at eps={eps!r}")
    else:
        table = e_mc(theta, reps=fc.e_reps if e_reps is None else e_reps, seed=seed, engine=engine)
    spec = build_majorant(fc.majorant, theta, table, r=cfg.r, eps=eps, e_source=fc.e_source)
    return theta, engine, table, spec


def cmd_select(args) -> int:
    cfg = resolve_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    fld = read_field(args.field)
    fc = _family(cfg, args.family)
    theta, engine, _, spec = _selector_parts(cfg, fc, fld.eps, fld.grid, args.e_reps, seed, args.etable)
    x = _point(args.x, cfg)
    res = select(fld, theta, spec, x, engine)
    res.write_trace_csv(args.out)
    _emit({"family": fc.name, "eps": fld.eps, "x": x.tolist(), "index": res.index, "h": list(res.mu.h),
           "angle": res.mu.angle, "estimate": res.estimate, "criterion": float(res.criterion[res.index]),
           "theta_size": len(theta), "ties": list(res.ties), "trace": str(args.out)})
    return 0


def cmd_majorant(args) -> int:
    cfg = resolve_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    fc = _family(cfg, args.family)
    eps = _eps_of(cfg, args.eps_index, args.eps)
    _, _, table, spec = _selector_parts(cfg, fc, eps, experiment_grid(cfg), args.reps, seed, None)
    table.to_csv(args.out)
    _emit(dict(spec.describe(), family=fc.name, eps=eps, e_reps=table.reps, seed=seed,
               se_warning=table.warning, etable=str(args.out)))
    return 0


def cmd_bench(args) -> int:
    if args.list:
        for name, path in sorted(bundled_configs().items()):
            print(f"{name}\t{path}")
        return 0
    if args.config is None:
        raise SystemExit("ptselect bench: a config path or bundled name is required")
    cfg = resolve_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.reps is not None:
        cfg = replace(cfg, reps=args.reps)
    if args.dry_run:
        _emit(dry_run(cfg))
        return 0
    out = Path(args.out) if args.out is not None else Path(f"runs/{cfg.name}")
    run_experiment(cfg, out, e_reps=args.e_reps)
    with open(out / "fit.csv", newline="") as fh:
        fits = fh.read()
    print(f"artifacts written to {out}")
    print(fits, end="")
    return 0


def cmd_verify(args) -> int:
    results = run_checks(seed=args.seed, quick=args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ptselect", description="Adaptive kernel selection in the white noise model.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw observation fields for a config")
    s.add_argument("config")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--eps-index", type=int, help="position in the config's eps grid (default 0)")
    g.add_argument("--eps", type=float, help="explicit noise level")
    s.add_argument("--seed", type=int)
    s.add_argument("--rep", type=int, default=0, help="first replication index")
    s.add_argument("--reps", type=int, help="number of replications; >1 makes --out a directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("select", help="run the selection rule on a stored field")
    s.add_argument("field")
    s.add_argument("--config", required=True)
    s.add_argument("--family")
    s.add_argument("--x", help="query point, comma separated (default: the config's first node)")
    s.add_argument("--etable", help="ETable CSV from 'ptselect majorant' (default: Monte Carlo)")
    s.add_argument("--e-reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="selection trace CSV")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("majorant", help="estimate e(sigma) and calibrate the majorant")
    s.add_argument("config")
    s.add_argument("--family")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--eps-index", type=int)
    g.add_argument("--eps", type=float)
    s.add_argument("--reps", type=int, help="Monte Carlo replications for e(sigma)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="ETable CSV")
    s.set_defaults(func=cmd_majorant)

    s = sub.add_parser("bench", help="run a risk experiment and write its artifacts")
    s.add_argument("config", nargs="?")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--e-reps", type=int)
    s.add_argument("--dry-run", action="store_true", help="validate and print Theta sizes only")
    s.add_argument("--list", action="store_true", help="list bundled configs")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("verify", help="run the invariant suites")
    s.add_argument("--quick", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"ptselect {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
