"""Scenario files, step-table and waveform CSVs, trace and decision output.

A scenario is one TOML file holding the grid (``[[nodes]]``, ``[[edges]]``,
``[segment_classes.*]``, ``[stations.*]``, ``[step_tables.*]``) and the run
settings (``[fault]``, ``[observation]``, ``[budget]``, ``[noise]``,
``[estimation]``). Relative file references resolve against the scenario's
directory.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any

import numpy as np

try:
    import tomllib as toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as toml

from .errors import ModelError
from .grid import GridGraph, build_grid
from .paths import PathBudget
from .twmodel import StepResponseTable, ideal_table, surrogate_table

FLOAT_FMT = "{:.17g}"


def fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


@dataclass(frozen=True)
class FaultSpec:
    edge: str
    d_f: float
    R_f: float
    t_f: float = 0.0
    V_bf: float = 1.0


@dataclass(frozen=True)
class NoiseSpec:
    sigma_v: float | None = None
    sigma_i: float | None = None
    snr_db: float | None = None  # used when sigmas are absent
    ratio: float = 4.0  # sigma_i^2 / sigma_v^2
    seed: int = 0


@dataclass(frozen=True)
class EstimationSpec:
    line: tuple[str, ...] = ()
    delta_n: int = 10
    budget_s: float = 500e-6
    t_alpha: float = 10.0
    r_max_cable: float = 5.0
    r_max_ohl: float = 200.0
    r_min: float = 0.01
    r_box: float = 1e4
    r_init_ohl: float = 10.0
    r_init_cable: float = 1.0
    lambda0: float = 1e-2
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e12
    inner_tries: int = 8
    max_iter: int = 100
    fd_jacobian: bool = False
    max_step_d: float | None = 0.2  # distance step cap as a fraction of the edge length
    amplitude_threshold: float = 1e-4
    follow_up: bool = False  # keep undecided hypotheses running after the decision
    settle_d: float = 0.005  # max distance change between windows, fraction of the edge length
    settle_r: float = 0.01  # max relative resistance change between windows
    detect_threshold: float | None = None  # volts; None: relative to the record
    k_d: int | None = None
    measurements: str | None = None


@dataclass
class ScenarioConfig:
    source: str
    grid: GridGraph
    fs: float
    fault: FaultSpec | None
    node: str | None
    relay_edge: str | None
    t0: float
    duration: float
    budget: PathBudget | None
    noise: NoiseSpec
    estimation: EstimationSpec
    base_dir: FsPath = field(default_factory=FsPath.cwd)
    raw: dict = field(default_factory=dict)


def _line_of(text: str, *tokens: str) -> int | None:
    """Best-effort line number of the first line containing every token."""
    for k, line in enumerate(text.splitlines(), 1):
        if all(t in line for t in tokens):
            return k
    return None


GRID_KEYS = ("nodes", "edges", "segment_classes", "stations", "step_tables")


def _nth_line(text: str, header: str, n: int) -> int | None:
    hits = [k for k, line in enumerate(text.splitlines(), 1) if line.strip() == header]
    return hits[n] if n < len(hits) else None


def _with_line(err: ModelError, text: str, *tokens) -> ModelError:
    if err.line is None:
        toks = [str(t) for t in tokens if t is not None]
        m = re.search(r"'([^']+)'", str(err))
        if m:
            toks = toks or [m.group(1)]
        line = _line_of(text, *toks) if toks else None
        if line is not None:
            msg = str(err).split("] ", 1)[-1]
            return ModelError(err.code, msg, line)
    return err


def _float(tbl: dict, key: str, text: str, section: str, default=None, required=True) -> float | None:
    if key not in tbl:
        if required and default is None:
            raise ModelError("missing-key", f"[{section}] needs '{key}'", _line_of(text, f"[{section}"))
        return default
    val = tbl[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ModelError("bad-type", f"[{section}] '{key}' must be a number", _line_of(text, key))
    return float(val)


def load_step_table_csv(path: str | FsPath, segment_class: str, fs: float) -> StepResponseTable:
    """Read rows ``class,rho_ohm_m,distance_km,k0,...`` for one class."""
    path = FsPath(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelError("unreadable-file", f"{path}: {exc.strerror}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0][:3]] != ["class", "rho_ohm_m", "distance_km"]:
        raise ModelError("bad-header", f"{path}: expected header class,rho_ohm_m,distance_km,k0,...", 1)
    data: dict[float | None, dict[float, np.ndarray]] = {}
    width = None
    for lineno, row in enumerate(rows[1:], 2):
        if not row or row[0].strip() != segment_class:
            continue
        try:
            rho = float(row[1]) if row[1].strip() else None
            d = float(row[2])
            u = np.array([float(x) for x in row[3:]])
        except ValueError:
            raise ModelError("bad-number", f"{path}: unparsable value", lineno) from None
        if width is None:
            width = u.size
        if u.size != width:
            raise ModelError("bad-table", f"{path}: response length {u.size} != {width}", lineno)
        data.setdefault(rho, {})[d] = u
    if not data:
        raise ModelError("bad-table", f"{path}: no rows for class {segment_class!r}")
    rhos = sorted(data, key=lambda r: -math.inf if r is None else r)
    if None in data and len(data) > 1:
        raise ModelError("bad-table", f"{path}: mixed empty and numeric resistivities")
    knots = sorted(data[rhos[0]])
    for r in rhos:
        if sorted(data[r]) != knots:
            raise ModelError("bad-table", f"{path}: distance knots differ between resistivities")
    resp = np.array([[data[r][d] for d in knots] for r in rhos])
    axis = np.zeros(0) if rhos == [None] else np.array(rhos, dtype=float)
    return StepResponseTable(segment_class, np.array(knots), resp, fs, axis)


def write_step_table_csv(path_or_buf, table: StepResponseTable):
    rows = _table_rows(table)
    _write(path_or_buf, rows)


def _table_rows(table: StepResponseTable) -> list[list[str]]:
    n = table.n_samples
    rows = [["class", "rho_ohm_m", "distance_km"] + [f"k{k}" for k in range(n)]]
    rhos = table.rhos if table.rhos.size else [None]
    for j, r in enumerate(rhos):
        for i, d in enumerate(table.distances):
            rows.append([table.segment_class, "" if r is None else fmt(r), fmt(d)]
                        + [fmt(x) for x in table.responses[j, i]])
    return rows


def _write(path_or_buf, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(buf.getvalue())
    else:
        FsPath(path_or_buf).write_text(buf.getvalue())


def write_waveform_csv(path_or_buf, t, v, i):
    rows = [["t_s", "v_V", "i_A"]] + [[fmt(a), fmt(b), fmt(c)] for a, b, c in zip(t, v, i)]
    _write(path_or_buf, rows)


def load_waveform_csv(path: str | FsPath, fs: float | None = None):
    """Read ``t_s,v_V,i_A``; time must be increasing with a constant step."""
    path = FsPath(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelError("unreadable-file", f"{path}: {exc.strerror}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["t_s", "v_V", "i_A"]:
        raise ModelError("bad-header", f"{path}: expected header t_s,v_V,i_A", 1)
    vals = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != 3:
            raise ModelError("bad-row", f"{path}: expected 3 columns", lineno)
        try:
            vals.append([float(x) for x in row])
        except ValueError:
            raise ModelError("bad-number", f"{path}: unparsable value", lineno) from None
    if len(vals) < 2:
        raise ModelError("insufficient-data", f"{path}: need at least two samples")
    arr = np.array(vals)
    t = arr[:, 0]
    dt = np.diff(t)
    step = 1.0 / fs if fs else dt[0]
    bad = np.nonzero(np.abs(dt - step) > 1e-6 * step)[0]
    if bad.size:
        raise ModelError("bad-timebase", f"{path}: time step is not constant 1/fs", int(bad[0]) + 3)
    return t, arr[:, 1], arr[:, 2]


def write_trace_csv(path_or_buf, states):
    rows = [["iter", "n", "d_f_km", "R_f_ohm", "cost", "area95", "status"]]
    for s in states:
        rows.append([str(s.iteration), str(s.n), fmt(s.d_f), fmt(s.R_f), fmt(s.cost), fmt(s.area), s.status])
    _write(path_or_buf, rows)


def load_trace_csv(path):
    with open(path, newline="") as fh:
        return [dict(iter=int(r["iter"]), n=int(r["n"]), d_f=float(r["d_f_km"]), R_f=float(r["R_f_ohm"]),
                     cost=float(r["cost"]), area=float(r["area95"]), status=r["status"])
                for r in csv.DictReader(fh)]


def write_paths_csv(path_or_buf, paths, amplitudes, d_f):
    rows = [["delay_s", "amplitude", "nodes"]]
    for p, a in zip(paths, amplitudes):
        rows.append([fmt(p.delay(d_f)), fmt(a), " ".join(p.nodes)])
    _write(path_or_buf, rows)


def dumps_json(obj) -> str:
    def clean(x):
        if isinstance(x, float):
            return x if math.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, np.generic):
            return clean(x.item())
        return x
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def _build_tables(raw: dict, classes: dict, fs: float, base: FsPath, text: str) -> dict:
    out = {}
    for name, spec in raw.items():
        if not isinstance(spec, dict):
            raise ModelError("bad-type", f"step table {name!r} must be a table", _line_of(text, f"step_tables.{name}"))
        cls = spec.get("class")
        if cls not in classes:
            raise ModelError("dangling-class", f"step table {name!r} references unknown class {cls!r}",
                             _line_of(text, "class", str(cls)) or _line_of(text, f"step_tables.{name}"))
        kind = spec.get("kind", "surrogate")
        section = f"step_tables.{name}"
        if kind == "surrogate":
            a = _float(spec, "a", text, section)
            b = _float(spec, "b", text, section, default=1.0, required=False)
            n = int(spec.get("n_samples", 1024))
            knots = spec.get("distances")
            if not isinstance(knots, list) or not knots:
                raise ModelError("missing-key", f"[{section}] needs a 'distances' list", _line_of(text, f"[{section}"))
            out[name] = surrogate_table(cls, a, b, [float(x) for x in knots], n, fs)
        elif kind == "ideal":
            out[name] = ideal_table(cls, float(spec.get("max_length", 1e6)), int(spec.get("n_samples", 2)), fs)
        elif kind == "file":
            fname = spec.get("file")
            if not fname:
                raise ModelError("missing-key", f"[{section}] needs 'file'", _line_of(text, f"[{section}"))
            out[name] = load_step_table_csv(base / fname, cls, fs)
        else:
            raise ModelError("unknown-kind", f"step table {name!r}: unknown kind {kind!r}", _line_of(text, "kind", kind))
    return out


def parse_scenario(text: str, base_dir: str | FsPath = ".", source: str = "<string>",
                   need_observation: bool = True) -> ScenarioConfig:
    """Parse a scenario; with ``need_observation=False`` a bare grid file is accepted too."""
    try:
        raw = toml.loads(text)
    except toml.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ModelError("syntax", str(exc), int(m.group(1)) if m else None) from None
    base = FsPath(base_dir)
    grid_text = text
    if "grid" in raw:
        gpath = base / str(raw["grid"])
        try:
            grid_text = gpath.read_text()
        except OSError as exc:
            raise ModelError("unreadable-file", f"{gpath}: {exc.strerror}", _line_of(text, "grid")) from None
        try:
            graw = toml.loads(grid_text)
        except toml.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ModelError("syntax", f"{gpath}: {exc}", int(m.group(1)) if m else None) from None
        for key in GRID_KEYS:
            if key in raw and key in graw:
                raise ModelError("duplicate-id", f"'{key}' given both in the scenario and in {gpath.name}",
                                 _line_of(text, key))
            if key in graw:
                raw[key] = graw[key]
        if "fs" not in raw and "fs" in graw:
            raw["fs"] = graw["fs"]
        base_grid = gpath.parent
    else:
        base_grid = base
    try:
        return _scenario(raw, text, base, source, grid_text, base_grid, need_observation)
    except ModelError as err:
        raise _with_line(err, text) from None
    except KeyError as exc:
        raise ModelError("missing-key", f"missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ModelError("bad-value", str(exc)) from None


def _scenario(raw: dict, text: str, base: FsPath, source: str, grid_text: str,
              base_grid: FsPath, need_observation: bool = True) -> ScenarioConfig:
    fs_text = text if re.search(r"^\s*fs\s*=", text, re.M) else grid_text
    fs = _float(raw, "fs", fs_text, "top level")
    if not fs > 0:
        raise ModelError("bad-value", f"fs must be > 0, got {fs}", _line_of(fs_text, "fs"))
    from .grid import _as_class
    classes = {k: _as_class(k, v) for k, v in raw.get("segment_classes", {}).items()}
    tables = _build_tables(raw.get("step_tables", {}), classes, fs, base_grid, grid_text)
    for i, node in enumerate(raw.get("nodes", [])):
        if "id" not in node:
            raise ModelError("missing-key", f"node #{i + 1} has no id", _nth_line(grid_text, "[[nodes]]", i))
    for i, edge in enumerate(raw.get("edges", [])):
        for key in ("id", "nodes", "length"):
            if key not in edge:
                raise ModelError("missing-key", f"edge #{i + 1} has no {key!r}", _nth_line(grid_text, "[[edges]]", i))
        if not isinstance(edge["nodes"], list) or len(edge["nodes"]) != 2:
            raise ModelError("bad-value", f"edge {edge['id']!r}: 'nodes' must list two node ids",
                             _line_of(grid_text, str(edge["id"])))
    try:
        grid = build_grid(dict(nodes=raw.get("nodes", []), edges=raw.get("edges", []),
                               segment_classes=classes, stations=raw.get("stations", {}),
                               step_tables=tables))
    except ModelError as err:
        raise _with_line(err, grid_text) from None

    fault = None
    if "fault" in raw:
        f = raw["fault"]
        edge = f.get("edge")
        if edge is None or not grid.has_edge(edge):
            raise ModelError("unknown-edge", f"[fault] edge {edge!r} is not in the grid",
                             _line_of(text, "edge", str(edge)) or _line_of(text, "[fault]"))
        fault = FaultSpec(edge, _float(f, "d_f", text, "fault"), _float(f, "R_f", text, "fault"),
                          _float(f, "t_f", text, "fault", 0.0, False), _float(f, "V_bf", text, "fault", 1.0, False))

    obs = raw.get("observation", {})
    node = obs.get("node")
    if node is None:
        if need_observation or obs:
            raise ModelError("missing-key", "[observation] needs 'node'", _line_of(text, "[observation]"))
    else:
        try:
            grid.node(node)
        except KeyError:
            raise ModelError("dangling-node", f"observation node {node!r} is not in the grid",
                             _line_of(text, "node", str(node))) from None
    relay = obs.get("relay_edge")
    if relay is not None and not grid.has_edge(relay):
        raise ModelError("unknown-edge", f"relay edge {relay!r} is not in the grid", _line_of(text, "relay_edge"))
    t0 = _float(obs, "t0", text, "observation", 0.0, False)
    duration = _float(obs, "duration", text, "observation", 1e-3, False)

    budget = None
    b = raw.get("budget")
    if b:
        try:
            budget = PathBudget(tau_max=b.get("tau_max"), n_max=b.get("n_max"))
        except ModelError as err:
            raise ModelError(err.code, str(err).split("] ", 1)[-1], _line_of(text, "[budget]")) from None

    nz = raw.get("noise", {})
    noise = NoiseSpec(sigma_v=nz.get("sigma_v"), sigma_i=nz.get("sigma_i"), snr_db=nz.get("snr_db"),
                      ratio=float(nz.get("ratio", 4.0)), seed=int(nz.get("seed", 0)))
    for key in ("sigma_v", "sigma_i"):
        val = getattr(noise, key)
        if val is not None and not val > 0:
            raise ModelError("bad-value", f"[noise] {key} must be > 0", _line_of(text, key))

    est_raw = dict(raw.get("estimation", {}))
    known = set(EstimationSpec.__dataclass_fields__)
    if "budget_us" in est_raw:
        est_raw["budget_s"] = float(est_raw.pop("budget_us")) * 1e-6
    unknown = sorted(set(est_raw) - known)
    if unknown:
        raise ModelError("unknown-key", f"[estimation] unknown key {unknown[0]!r}", _line_of(text, unknown[0]))
    if "line" in est_raw:
        est_raw["line"] = tuple(est_raw["line"])
        for e in est_raw["line"]:
            if not grid.has_edge(e):
                raise ModelError("unknown-edge", f"[estimation] line edge {e!r} is not in the grid",
                                 _line_of(text, "line", e))
    est = EstimationSpec(**est_raw)
    if est.delta_n < 1:
        raise ModelError("bad-value", "[estimation] delta_n must be >= 1", _line_of(text, "delta_n"))
    return ScenarioConfig(source, grid, fs, fault, node, relay, t0, duration, budget, noise, est, base, raw)


def load_scenario(path: str | FsPath, need_observation: bool = True) -> ScenarioConfig:
    path = FsPath(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelError("unreadable-file", f"{path}: {exc.strerror}") from None
    try:
        return parse_scenario(text, path.parent, str(path), need_observation)
    except ModelError as err:
        raise ModelError(err.code, f"{path}: " + str(err).split("] ", 1)[-1], err.line) from None
