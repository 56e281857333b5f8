"""Scenario documents (YAML or JSON) and result export.

A scenario document has four top-level sections::

    params:   {v_min, v_max, u_min, u_max, gamma, phi, length, t_h}
    paths:    [{id, length, nodes: [{id, station}, ...]}, ...]
    arrivals: [{vehicle, path, time, speed}, ...]
    sim:      {sample_rate, duration, seed, disturbance_std, grid_step,
               infeasibility_policy, delay_step, max_delay}

All quantities are SI without unit suffixes.  Identifiers are read as strings.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
from dataclasses import asdict
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np
import yaml

from .errors import InvalidArgumentError, RoundaboutError
from .primitive import VehicleParams
from .safety import PathGeometry
from .scheduler import POLICIES, Arrival
from .simulator import Metrics, ScenarioSpec, SimResult

PARAM_DEFAULTS = asdict(VehicleParams())
SIM_DEFAULTS = {
    "sample_rate": 20.0,
    "duration": None,
    "seed": 0,
    "disturbance_std": 0.0,
    "grid_step": 0.01,
    "infeasibility_policy": "error",
    "delay_step": 0.1,
    "max_delay": 60.0,
}
_SECTIONS = ("params", "paths", "arrivals", "sim")
_PATH_KEYS = ("id", "length", "nodes")
_NODE_KEYS = ("id", "station")
_ARRIVAL_KEYS = ("vehicle", "path", "time", "speed")

_EXP_FLOAT = re.compile(r"[-+]?\d+(\.\d*)?[eE][-+]?\d+")

# exit-code classes: schema problems are "parse", semantic ones "invariant"
PARSE_CODES = frozenset({"syntax", "unknown_field", "missing_field", "type"})


class ScenarioError(RoundaboutError):
    """Machine-readable scenario diagnostic.

    ``code`` is one of ``syntax``, ``unknown_field``, ``missing_field``,
    ``type``, ``dangling_reference`` or ``invariant``; ``field`` is a dotted
    address such as ``arrivals[2].path``; ``line`` is 1-based when known.
    """

    def __init__(self, code: str, message: str, field: str = "", line: Optional[int] = None):
        self.code = code
        self.field = field
        self.line = line
        where = field or "<document>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{code}: {where}: {message}")

    @property
    def is_parse_error(self) -> bool:
        return self.code in PARSE_CODES

    def as_dict(self) -> dict:
        return {"code": self.code, "field": self.field, "line": self.line, "message": str(self)}


# --------------------------------------------------------------------------- parsing


def _compose(text: str):
    """Load YAML into plain Python, recording the source line of every field."""
    lines = {}
    try:
        loader = yaml.SafeLoader(text)
        try:
            root = loader.get_single_node()
        finally:
            loader.dispose()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError("syntax", str(exc).replace("\n", " "),
                            line=None if mark is None else mark.line + 1) from None
    if root is None:
        return {}, lines

    constructor = yaml.SafeLoader("")

    def walk(node, addr: str):
        lines[addr] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out = {}
            for key_node, value_node in node.value:
                key = constructor.construct_object(key_node)
                if not isinstance(key, str):
                    raise ScenarioError("syntax", f"non-string key {key!r}", addr,
                                        key_node.start_mark.line + 1)
                if key in out:
                    raise ScenarioError("syntax", f"duplicate key {key!r}", addr,
                                        key_node.start_mark.line + 1)
                out[key] = walk(value_node, f"{addr}.{key}" if addr else key)
            return out
        if isinstance(node, yaml.SequenceNode):
            return [walk(v, f"{addr}[{i}]") for i, v in enumerate(node.value)]
        try:
            return constructor.construct_object(node, deep=True)
        except yaml.YAMLError as exc:
            raise ScenarioError("syntax", str(exc), addr, node.start_mark.line + 1) from None

    return walk(root, ""), lines


class _Reader:
    def __init__(self, lines: dict):
        self.lines = lines

    def fail(self, code: str, addr: str, message: str):
        line = self.lines.get(addr)
        if line is None:
            # fall back to the nearest enclosing field that has a line
            probe = addr
            while probe and line is None:
                parent = re.sub(r"(\.[^.\[]+|\[\d+\])$", "", probe)
                probe = "" if parent == probe else parent
                line = self.lines.get(probe)
        raise ScenarioError(code, message, addr, line)

    def mapping(self, value, addr: str, allowed: Iterable[str]) -> dict:
        if not isinstance(value, dict):
            self.fail("type", addr, f"expected a mapping, got {type(value).__name__}")
        for key in value:
            if key not in allowed:
                self.fail("unknown_field", f"{addr}.{key}" if addr else key, "unknown field")
        return value

    def sequence(self, value, addr: str) -> list:
        if not isinstance(value, list):
            self.fail("type", addr, f"expected a list, got {type(value).__name__}")
        return value

    def number(self, value, addr: str) -> float:
        # YAML 1.1 resolvers read exponent forms without a dot (``1e9``) as strings
        if isinstance(value, str) and _EXP_FLOAT.fullmatch(value.strip()):
            value = float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail("type", addr, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            self.fail("invariant", addr, f"must be finite, got {value!r}")
        return float(value)

    def integer(self, value, addr: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail("type", addr, f"expected an integer, got {value!r}")
        return int(value)

    def ident(self, value, addr: str) -> str:
        if isinstance(value, bool) or not isinstance(value, (str, int)):
            self.fail("type", addr, f"expected an identifier, got {value!r}")
        return str(value)

    def required(self, mapping: dict, key: str, addr: str):
        if key not in mapping:
            self.fail("missing_field", f"{addr}.{key}", "required field is missing")
        return mapping[key]


def load_document(text: str) -> tuple:
    """Raw document as nested dicts/lists plus a field-address -> line map."""
    doc, lines = _compose(text)
    if doc is None:
        doc = {}
    return doc, lines


_TOKEN = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


def apply_overrides(doc: dict, overrides: Iterable[str]) -> dict:
    """Apply ``key=value`` overrides such as ``params.t_h=2`` or ``arrivals[1].time=4.5``.

    Values are parsed as YAML scalars.  Missing intermediate sections are
    created; the override key must still name a schema field, which the
    subsequent validation enforces.
    """
    for item in overrides:
        if "=" not in item:
            raise ScenarioError("syntax", f"override {item!r} is not key=value", "--set")
        key, raw = item.split("=", 1)
        key = key.strip()
        try:
            value = yaml.safe_load(raw) if raw.strip() else None
        except yaml.YAMLError:
            raise ScenarioError("syntax", f"cannot parse override value {raw!r}", key) from None
        tokens = [(m.group(1), m.group(2)) for m in _TOKEN.finditer(key)]
        if not tokens or tokens[0][0] is None:
            raise ScenarioError("syntax", f"override key {key!r} must start with a section name", "--set")
        node: Any = doc
        for pos, (name, index) in enumerate(tokens):
            last = pos == len(tokens) - 1
            if name is not None:
                if not isinstance(node, dict):
                    raise ScenarioError("unknown_field", "override path does not exist", key)
                if last:
                    node[name] = value
                else:
                    nxt = tokens[pos + 1]
                    node = node.setdefault(name, {} if nxt[0] is not None else [])
            else:
                i = int(index)
                if not isinstance(node, list) or i >= len(node):
                    raise ScenarioError("unknown_field", "override index out of range", key)
                if last:
                    node[i] = value
                else:
                    node = node[i]
    return doc


def validate_document(doc: Any, lines: Optional[dict] = None) -> ScenarioSpec:
    r = _Reader(lines or {})
    doc = r.mapping(doc, "", _SECTIONS)

    raw_params = r.mapping(doc.get("params", {}) or {}, "params", PARAM_DEFAULTS)
    pvals = dict(PARAM_DEFAULTS)
    for key, value in raw_params.items():
        pvals[key] = r.number(value, f"params.{key}")
    try:
        params = VehicleParams(**pvals)
    except InvalidArgumentError as exc:
        r.fail("invariant", "params", str(exc))

    geoms = []
    path_ids = set()
    for i, raw_path in enumerate(r.sequence(r.required(doc, "paths", ""), "paths")):
        addr = f"paths[{i}]"
        raw_path = r.mapping(raw_path, addr, _PATH_KEYS)
        pid = r.ident(r.required(raw_path, "id", addr), f"{addr}.id")
        if pid in path_ids:
            r.fail("invariant", f"{addr}.id", f"duplicate path id {pid!r}")
        path_ids.add(pid)
        length = r.number(r.required(raw_path, "length", addr), f"{addr}.length")
        if not length > 0:
            r.fail("invariant", f"{addr}.length", "must be positive")
        nodes = []
        seen_nodes = set()
        prev = 0.0
        for j, raw_node in enumerate(r.sequence(raw_path.get("nodes", []) or [], f"{addr}.nodes")):
            naddr = f"{addr}.nodes[{j}]"
            raw_node = r.mapping(raw_node, naddr, _NODE_KEYS)
            nid = r.ident(r.required(raw_node, "id", naddr), f"{naddr}.id")
            station = r.number(r.required(raw_node, "station", naddr), f"{naddr}.station")
            if nid in seen_nodes:
                r.fail("invariant", f"{naddr}.id", f"duplicate node {nid!r} on path {pid!r}")
            if not (0.0 < station < length):
                r.fail("invariant", f"{naddr}.station", f"must lie strictly inside (0, {length!r})")
            if station <= prev:
                r.fail("invariant", f"{naddr}.station", "stations must be strictly increasing")
            seen_nodes.add(nid)
            prev = station
            nodes.append((nid, station))
        geoms.append(PathGeometry(pid, length, tuple(nodes)))

    arrivals = []
    vehicles = set()
    last_time = -math.inf
    for i, raw in enumerate(r.sequence(doc.get("arrivals", []) or [], "arrivals")):
        addr = f"arrivals[{i}]"
        raw = r.mapping(raw, addr, _ARRIVAL_KEYS)
        vid = r.ident(r.required(raw, "vehicle", addr), f"{addr}.vehicle")
        pid = r.ident(r.required(raw, "path", addr), f"{addr}.path")
        t0 = r.number(r.required(raw, "time", addr), f"{addr}.time")
        v0 = r.number(r.required(raw, "speed", addr), f"{addr}.speed")
        if pid not in path_ids:
            r.fail("dangling_reference", f"{addr}.path", f"unknown path {pid!r}")
        if vid in vehicles:
            r.fail("invariant", f"{addr}.vehicle", f"duplicate vehicle id {vid!r}")
        if t0 < 0:
            r.fail("invariant", f"{addr}.time", "must be non-negative")
        if t0 < last_time:
            r.fail("invariant", f"{addr}.time", "arrivals must be sorted by time")
        if not (params.v_min <= v0 <= params.v_max):
            r.fail("invariant", f"{addr}.speed",
                   f"entry speed {v0!r} outside [{params.v_min!r}, {params.v_max!r}]")
        vehicles.add(vid)
        last_time = t0
        arrivals.append(Arrival(vid, pid, t0, v0))

    raw_sim = r.mapping(doc.get("sim", {}) or {}, "sim", SIM_DEFAULTS)
    sim = dict(SIM_DEFAULTS)
    for key, value in raw_sim.items():
        addr = f"sim.{key}"
        if key == "seed":
            sim[key] = r.integer(value, addr)
        elif key == "infeasibility_policy":
            if value not in POLICIES:
                r.fail("invariant", addr, f"must be one of {', '.join(POLICIES)}")
            sim[key] = value
        elif key == "duration":
            sim[key] = None if value is None else r.number(value, addr)
        else:
            sim[key] = r.number(value, addr)
    for key in ("sample_rate", "grid_step", "delay_step"):
        if not sim[key] > 0:
            r.fail("invariant", f"sim.{key}", "must be positive")
    for key in ("disturbance_std", "max_delay"):
        if sim[key] < 0:
            r.fail("invariant", f"sim.{key}", "must be non-negative")
    if sim["duration"] is not None and not sim["duration"] > 0:
        r.fail("invariant", "sim.duration", "must be positive")

    return ScenarioSpec(geoms=tuple(geoms), params=params, arrivals=tuple(arrivals), **sim)


def parse_scenario(document: str, overrides: Iterable[str] = ()) -> ScenarioSpec:
    doc, lines = load_document(document)
    overrides = list(overrides)
    if overrides:
        doc = apply_overrides(doc, overrides)
    return validate_document(doc, lines)


def load_scenario(path, overrides: Iterable[str] = ()) -> ScenarioSpec:
    return parse_scenario(Path(path).read_text(), overrides)


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "params": asdict(spec.params),
        "paths": [
            {"id": g.path_id, "length": g.zone_length,
             "nodes": [{"id": n, "station": l} for n, l in g.nodes]}
            for g in spec.geoms
        ],
        "arrivals": [
            {"vehicle": a.vehicle_id, "path": a.path_id, "time": a.entry_time, "speed": a.entry_speed}
            for a in spec.arrivals
        ],
        "sim": {
            "sample_rate": spec.sample_rate,
            "duration": spec.duration,
            "seed": spec.seed,
            "disturbance_std": spec.disturbance_std,
            "grid_step": spec.grid_step,
            "infeasibility_policy": spec.infeasibility_policy,
            "delay_step": spec.delay_step,
            "max_delay": spec.max_delay,
        },
    }


def serialize_scenario(spec: ScenarioSpec) -> str:
    return yaml.safe_dump(scenario_to_dict(spec), sort_keys=False, default_flow_style=None)


# --------------------------------------------------------------------------- export

TRAJECTORY_COLUMNS = ("vehicle", "t", "p", "v", "u")
CROSSING_COLUMNS = ("vehicle", "node", "time")
SCHEDULE_COLUMNS = ("vehicle", "t0", "t_lo", "t_hi", "chosen_tf", "achieved_tf", "path")
EXIT_COLUMNS = ("vehicle", "path", "t0", "window_lo", "window_hi", "scheduled_exit", "achieved_exit")
ENVELOPE_COLUMNS = ("path", "tau", "v_min", "v_avg", "v_max", "count")
BAND_COLUMNS = ("vehicle", "leader", "t", "p", "p_limit")
NODE_BAND_COLUMNS = ("node", "vehicle", "crossing", "band_lo", "band_hi")

CORE_FILES = ("scenario.yaml", "trajectories.csv", "crossings.csv", "schedule.csv", "metrics.json")
PLOT_FILES = ("exit_times.csv", "speed_envelope.csv", "position_bands.csv", "node_bands.csv")


def _fmt(x) -> str:
    # repr of a float is the shortest string that round-trips exactly
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _read_csv(path: Path) -> list:
    if not path.exists():
        raise FileNotFoundError(f"missing result file: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(x) else float(x)
    return x


def metrics_document(metrics: Optional[Metrics], result: SimResult) -> dict:
    doc = {"vehicles": len(result.schedule)}
    if metrics is not None:
        doc.update(metrics.as_dict())
    doc["violations"] = [
        {"kind": v.kind, "vehicle": v.vehicle_id, "other": v.other_id, "margin": v.margin,
         "time": v.time, "node": v.node}
        for v in result.violations
    ]
    return _jsonable(doc)


def export_results(result: SimResult, metrics: Optional[Metrics], out_dir) -> list:
    """Write CSV/JSON exports and plot-ready tables; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = result.spec

    (out / "scenario.yaml").write_text(serialize_scenario(spec))

    traj_rows = []
    for outcome in result.schedule:
        vid = outcome.plan.vehicle_id
        tr = result.samples[vid]
        traj_rows.extend((vid, t, p, v, u) for t, p, v, u in zip(tr.t, tr.p, tr.v, tr.u))
    _write_csv(out / "trajectories.csv", TRAJECTORY_COLUMNS, traj_rows)
    _write_csv(out / "crossings.csv", CROSSING_COLUMNS, result.crossings)
    sched_rows = []
    for o in result.schedule:
        p = o.plan
        sched_rows.append((p.vehicle_id, p.entry_time, o.window.t_lo, o.window.t_hi,
                           o.chosen_horizon, result.achieved_exit[p.vehicle_id] - p.entry_time,
                           p.path_id))
    _write_csv(out / "schedule.csv", SCHEDULE_COLUMNS, sched_rows)
    (out / "metrics.json").write_text(
        json.dumps(metrics_document(metrics, result), indent=2, sort_keys=True) + "\n")

    written = [out / name for name in CORE_FILES]
    written += write_plot_data(out)
    return written


def write_plot_data(result_dir, out_dir=None) -> list:
    """Derive plot tables from the core export files only."""
    src = Path(result_dir)
    dst = Path(out_dir) if out_dir is not None else src
    dst.mkdir(parents=True, exist_ok=True)
    scen_path = src / "scenario.yaml"
    if not scen_path.exists():
        raise FileNotFoundError(f"missing result file: {scen_path}")
    schedule = _read_csv(src / "schedule.csv")
    traj = _read_csv(src / "trajectories.csv")
    crossings = _read_csv(src / "crossings.csv")
    spec = parse_scenario(scen_path.read_text())
    params = spec.params
    rate = spec.sample_rate

    exit_rows = []
    t0_of, path_of = {}, {}
    for row in schedule:
        t0 = float(row["t0"])
        vid = row["vehicle"]
        t0_of[vid], path_of[vid] = t0, row["path"]
        exit_rows.append((vid, row["path"], t0, t0 + float(row["t_lo"]), t0 + float(row["t_hi"]),
                          t0 + float(row["chosen_tf"]), t0 + float(row["achieved_tf"])))
    _write_csv(dst / "exit_times.csv", EXIT_COLUMNS, exit_rows)

    tracks = {}
    for row in traj:
        tracks.setdefault(row["vehicle"], []).append(
            (float(row["t"]), float(row["p"]), float(row["v"])))
    tracks = {k: np.array(v).reshape(-1, 3) for k, v in tracks.items()}

    env = {}
    for vid, arr in tracks.items():
        ks = np.rint((arr[:, 0] - t0_of[vid]) * rate).astype(int)
        for k, v in zip(ks, arr[:, 2]):
            env.setdefault((path_of[vid], int(k)), []).append(v)
    env_rows = []
    for (pid, k) in sorted(env, key=lambda key: (str(key[0]), key[1])):
        vs = env[(pid, k)]
        env_rows.append((pid, k / rate, min(vs), float(np.mean(vs)), max(vs), len(vs)))
    _write_csv(dst / "speed_envelope.csv", ENVELOPE_COLUMNS, env_rows)

    band_rows = []
    order = sorted(t0_of, key=lambda v: t0_of[v])
    for idx, vid in enumerate(order):
        same = [u for u in order[:idx] if path_of[u] == path_of[vid] and u in tracks]
        if not same or vid not in tracks:
            continue
        leader = same[-1]
        lt = tracks[leader]
        ft = tracks[vid]
        mask = (ft[:, 0] >= lt[0, 0]) & (ft[:, 0] <= lt[-1, 0])
        pk = np.interp(ft[mask, 0], lt[:, 0], lt[:, 1])
        limit = pk - params.length - params.gamma - params.phi * ft[mask, 2]
        band_rows.extend((vid, leader, t, p, lim) for (t, p), lim in zip(ft[mask, :2], limit))
    _write_csv(dst / "position_bands.csv", BAND_COLUMNS, band_rows)

    node_rows = []
    for row in sorted(crossings, key=lambda r: (r["node"], float(r["time"]))):
        t = float(row["time"])
        node_rows.append((row["node"], row["vehicle"], t, t - params.t_h, t + params.t_h))
    _write_csv(dst / "node_bands.csv", NODE_BAND_COLUMNS, node_rows)
    return [dst / name for name in PLOT_FILES]


def write_manifest(paths, out_dir) -> Path:
    out = Path(out_dir)
    entries = []
    for p in sorted(Path(x) for x in paths):
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        entries.append({"file": os.path.relpath(p, out), "sha256": digest})
    target = out / "manifest.json"
    target.write_text(json.dumps(entries, indent=2) + "\n")
    return target
