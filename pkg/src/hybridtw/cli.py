"""Command-line frontend.

Exit codes: 0 success, 1 gradient check above tolerance, 2 invalid input
(config, grid or data files), 3 failure while computing.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .config import (ScenarioConfig, dumps_json, fmt, load_scenario, write_paths_csv, write_step_table_csv,
                     write_trace_csv, write_waveform_csv)
from .errors import ModelError
from .estimator import Hypothesis, HypothesisModel, jacobian_error, smooth_stencil
from .paths import PathBudget, enumerate_paths
from .scenario import fault_of, identify, load_record, protected_line, synthesize_record
from .twmodel import WaveModel, surrogate_table

CONFIG_ENV = "HYBRIDTW_CONFIG"
EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3


class InputError(Exception):
    """Wraps a ModelError raised while reading inputs (maps to exit 2)."""


def _load(args, need_observation: bool = True) -> ScenarioConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        raise InputError(ModelError("missing-config", f"no config given (use --config or ${CONFIG_ENV})"))
    try:
        return load_scenario(path, need_observation)
    except ModelError as err:
        raise InputError(err) from None


def _out(path: str | None):
    """Open ``path`` for writing (``-`` or None means stdout)."""
    if path in (None, "-"):
        return sys.stdout
    FsPath(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def _emit(path, writer, *a):
    fh = _out(path)
    try:
        writer(fh, *a)
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_simulate(args) -> int:
    cfg = _load(args)
    rec = synthesize_record(cfg, noisy=args.noisy, seed=args.seed, snap=args.snap)
    _emit(args.output, write_waveform_csv, rec.t, rec.v, rec.i)
    return EXIT_OK


def cmd_paths(args) -> int:
    cfg = _load(args)
    fg, p = fault_of(cfg)
    budget = cfg.budget or PathBudget(tau_max=cfg.t0 + cfg.duration - p.t_f)
    paths = enumerate_paths(fg, fg.fault_node, cfg.node, budget, p.d_f)
    n = max(2, int(round(cfg.duration * cfg.fs)))
    model = WaveModel(fg, paths, cfg.node, cfg.fs, n, cfg.relay_edge)
    _emit(args.output, write_paths_csv, model.paths, model.amplitudes(p.R_f), p.d_f)
    return EXIT_OK


def cmd_identify(args) -> int:
    cfg = _load(args)
    if args.measurements:
        try:
            rec = load_record(cfg, args.measurements)
        except ModelError as err:
            raise InputError(err) from None
    else:
        rec = synthesize_record(cfg, noisy=True, seed=args.seed)
    res = identify(cfg, rec, workers=args.workers)
    out = FsPath(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = res.summary()
    (out / "decision.json").write_text(dumps_json(summary))
    for edge, states in res.traces.items():
        with open(out / f"trace_{edge}.csv", "w", newline="") as fh:
            write_trace_csv(fh, states)
    d = summary["d_f_km"]
    print(f"edge={summary['edge']} d_f_km={fmt(d) if d is not None else 'none'} "
          f"R_f_ohm={fmt(summary['R_f_ohm']) if d is not None else 'none'} n={summary['n']}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load(args)
    line = protected_line(cfg)
    est = cfg.estimation
    rng = np.random.default_rng(args.seed)
    n = args.samples
    models: dict[str, HypothesisModel] = {}
    rows = [["trial", "edge", "d_f_km", "R_f_ohm", "err_d", "err_R"]]
    worst = 0.0
    v_bf = cfg.fault.V_bf if cfg.fault is not None else 1.0
    for trial in range(args.trials):
        while True:
            edge = line.edges[int(rng.integers(len(line.edges)))]
            if edge not in models:
                hyp = Hypothesis(0, edge, cfg.grid.segment(edge).kind, cfg.grid.edge(edge).length,
                                 est.r_min, est.r_box)
                models[edge] = HypothesisModel(cfg.grid, hyp, line, cfg.fs, n, cfg.relay_edge,
                                               est.amplitude_threshold)
            m = models[edge]
            L = m.hyp.length
            d = float(rng.uniform(0.15 * L, 0.85 * L))
            r = float(math.exp(rng.uniform(math.log(0.5), math.log(500.0))))
            if smooth_stencil(m, d, args.h_d):
                break
        err = jacobian_error(m, d, r, v_bf, n, args.h_d, args.h_r)
        worst = max(worst, float(err.max()))
        rows.append([str(trial), edge, fmt(d), fmt(r), fmt(err[0]), fmt(err[1])])
    fh = _out(args.output)
    try:
        for row in rows:
            fh.write(",".join(row) + "\n")
        fh.write(f"# max_relative_error={fmt(worst)} tolerance={fmt(args.tol)} "
                 f"{'pass' if worst <= args.tol else 'fail'}\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK if worst <= args.tol else EXIT_CHECK


def cmd_stepgen(args) -> int:
    if args.config or (os.environ.get(CONFIG_ENV) and args.a is None):
        cfg = _load(args, need_observation=False)
        if args.table is None:
            if len(cfg.grid.tables) != 1:
                raise InputError(ModelError("missing-key", f"choose a table with --table: {sorted(cfg.grid.tables)}"))
            name = next(iter(cfg.grid.tables))
        else:
            name = args.table
        if name not in cfg.grid.tables:
            raise InputError(ModelError("unknown-table", f"no step table named {name!r}"))
        table = cfg.grid.tables[name]
    else:
        if args.a is None or not args.distances or args.fs is None:
            raise InputError(ModelError("missing-key", "stepgen needs --a, --distances and --fs (or --config)"))
        try:
            knots = [float(x) for x in args.distances.split(",")]
            table = surrogate_table(args.segment_class, args.a, args.b, knots, args.n_samples, args.fs)
        except ValueError as exc:
            raise InputError(ModelError("bad-value", str(exc))) from None

    _emit(args.output, write_step_table_csv, table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridtw", description="Traveling-wave modelling and fault identification")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("-c", "--config", help=f"scenario file (default: ${CONFIG_ENV})")
        return p

    p = with_config(sub.add_parser("simulate", help="waveform CSV at the observation node"))
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--noisy", action="store_true", help="add the configured measurement noise")
    p.add_argument("--snap", action="store_true", help="move t_f so the first arrival falls on a sample")
    p.add_argument("--seed", type=int, default=None, help="noise seed (default: config)")
    p.set_defaults(func=cmd_simulate)

    p = with_config(sub.add_parser("paths", help="Bewley lattice CSV"))
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_paths)

    p = with_config(sub.add_parser("identify", help="faulty segment, distance and resistance"))
    p.add_argument("-m", "--measurements", help="t_s,v_V,i_A CSV (default: self-generated noisy record)")
    p.add_argument("-o", "--output-dir", default=".")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_identify)

    p = with_config(sub.add_parser("gradcheck", help="analytic vs finite-difference Jacobian"))
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=300)
    p.add_argument("--h-d", type=float, default=1e-3, help="distance step in km")
    p.add_argument("--h-r", type=float, default=1e-3, help="relative resistance step")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_gradcheck)

    p = with_config(sub.add_parser("stepgen", help="surrogate step-table CSV"))
    p.add_argument("--table", help="table name in the config (needed when it has several)")
    p.add_argument("--class", dest="segment_class", default="ohl")
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--distances", help="comma-separated knots in km")
    p.add_argument("--n-samples", type=int, default=1024)
    p.add_argument("--fs", type=float)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_stepgen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_INPUT
    except ModelError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
