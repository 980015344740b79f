"""Scenario files: one JSON document drives both the bounds and the simulation.

Schema (all keys except ``flows``, ``nodes`` and ``topology`` are optional)::

    {
      "name": "md1-constant",
      "grid": {"step": 0.05, "horizon": 40},          # x-grid of published bounds
      "curve_grid": {"step": 1, "horizon": 64},       # packet lattice for curve ops
      "eta": "auto" | 0.1 | [0.05, 0.1, 0.2],
      "flows": [{"name": "f", "source": {...}, "model": {...}}],
      "nodes": [{"name": "n", "server": {...}, "model": {...}}],
      "topology": {"paths": {"f": ["n"]},
                   "aggregates": [{"flows": ["f", "g"], "node": "n"}]},
      "analysis": ["delay", "backlog", "output", "concatenation",
                   "superposition", "leftover"],
      "simulation": {"packets": 100000, "replications": 20, "seed": 0}
    }

Sources: ``{"kind": "deterministic", "period"}``, ``{"kind": "poisson", "rate"}``,
``{"kind": "gcra_shaped", "T", "tau", "inner": {...}}``.
Servers: ``{"kind": "constant", "T"}``, ``{"kind": "slotted_wireless", "delta", "Pe"}``.
Traffic models: ``{"type": "md1_vsd", "mu", "D"}``, ``{"type": "poisson_iat", "rho"}``,
``{"type": "gcra", "T", "tau"}`` or ``{"type": "explicit", "kind", "curve", "bound"}``.
Server models: ``{"type": "constant", "T"}``, ``{"type": "wireless", "delta", "Pe",
"slack"}`` or explicit.  A missing server model is derived from the server spec.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .curves import GridSpec
from .models import (ServerModel, TrafficModel, constant_server, gcra_arrival, md1_vsd_arrival,
                     poisson_iat_arrival, wireless_id_server)
from .simulator import ServerSpec, SimulationError, SourceSpec

PROPERTIES = ("delay", "backlog", "output", "concatenation", "superposition", "leftover")
DEFAULT_ETAS = (0.02, 0.05, 0.1, 0.2, 0.5)
MAX_SIMULATED_PACKETS = 50_000_000


class ScenarioError(ValueError):
    exit_code = 2


class ScenarioParseError(ScenarioError):
    pass


class ScenarioReferenceError(ScenarioError):
    pass


class ScenarioInvariantError(ScenarioError):
    pass


@dataclass
class Scenario:
    raw: dict

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.to_json() == other.to_json()

    # -------------------------------------------------------------- accessors
    @property
    def name(self) -> str:
        return self.raw.get("name", "scenario")

    @property
    def grid(self) -> GridSpec:
        g = self.raw.get("grid", {})
        return GridSpec(float(g.get("step", 0.05)), float(g.get("horizon", 40.0)))

    @property
    def curve_grid(self) -> Optional[GridSpec]:
        g = self.raw.get("curve_grid")
        return None if g is None else GridSpec(float(g.get("step", 1.0)), float(g["horizon"]))

    @property
    def etas(self) -> tuple:
        eta = self.raw.get("eta", "auto")
        if eta == "auto":
            return DEFAULT_ETAS
        if isinstance(eta, list):
            return tuple(float(e) for e in eta)
        return (float(eta),)

    @property
    def analysis(self) -> list:
        return list(self.raw.get("analysis", ["delay"]))

    @property
    def simulation(self) -> dict:
        s = self.raw.get("simulation", {})
        return {"packets": int(s.get("packets", 100_000)),
                "replications": int(s.get("replications", 1)),
                "seed": int(s.get("seed", 0))}

    @property
    def flow_names(self) -> list:
        return [f["name"] for f in self.raw["flows"]]

    @property
    def node_names(self) -> list:
        return [n["name"] for n in self.raw["nodes"]]

    def flow(self, name: str) -> dict:
        return next(f for f in self.raw["flows"] if f["name"] == name)

    def node(self, name: str) -> dict:
        return next(n for n in self.raw["nodes"] if n["name"] == name)

    @property
    def paths(self) -> dict:
        return dict(self.raw["topology"].get("paths", {}))

    @property
    def aggregates(self) -> list:
        return list(self.raw["topology"].get("aggregates", []))

    def source(self, flow: str) -> SourceSpec:
        return SourceSpec.from_json(self.flow(flow)["source"])

    def server(self, node: str) -> ServerSpec:
        return ServerSpec.from_json(self.node(node)["server"])

    def traffic_model(self, flow: str) -> TrafficModel:
        return build_traffic_model(self.flow(flow).get("model"), self.grid)

    def server_model(self, node: str) -> ServerModel:
        spec = self.node(node)
        return build_server_model(spec.get("model"), spec["server"], self.grid)

    # ----------------------------------------------------------- overrides
    def with_overrides(self, **kw) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        if kw.get("grid_step") is not None or kw.get("horizon") is not None:
            g = raw.setdefault("grid", {})
            if kw.get("grid_step") is not None:
                g["step"] = kw["grid_step"]
            if kw.get("horizon") is not None:
                g["horizon"] = kw["horizon"]
        sim = raw.setdefault("simulation", {})
        for key in ("packets", "replications", "seed"):
            if kw.get(key) is not None:
                sim[key] = kw[key]
        return validate(raw)

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def build_traffic_model(spec: Optional[dict], grid: GridSpec) -> TrafficModel:
    if spec is None:
        raise ScenarioInvariantError("flows[].model is required")
    t = spec.get("type")
    if t == "md1_vsd":
        return md1_vsd_arrival(float(spec["mu"]), float(spec["D"]), grid)
    if t == "poisson_iat":
        return poisson_iat_arrival(float(spec["rho"]), grid)
    if t == "gcra":
        return gcra_arrival(float(spec["T"]), float(spec.get("tau", 0.0)))
    if t == "explicit":
        return TrafficModel.from_json(spec)
    raise ScenarioInvariantError(f"flows[].model.type: unknown model type {t!r}")


def build_server_model(spec: Optional[dict], server: dict, grid: GridSpec) -> ServerModel:
    if spec is None:
        spec = ({"type": "constant", "T": server["T"]} if server["kind"] == "constant" else
                {"type": "wireless", "delta": server["delta"], "Pe": server["Pe"]})
    t = spec.get("type")
    if t == "constant":
        return constant_server(float(spec["T"]))
    if t == "wireless":
        return wireless_id_server(float(spec["delta"]), float(spec["Pe"]),
                                  float(spec.get("slack", 0.1)), grid)
    if t == "explicit":
        return ServerModel.from_json(spec)
    raise ScenarioInvariantError(f"nodes[].model.type: unknown model type {t!r}")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _positive(value, where: str):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0 \
            or not math.isfinite(value):
        raise ScenarioInvariantError(f"{where} must be a positive number, got {value!r}")


def _probability(value, where: str):
    if not isinstance(value, (int, float)) or not 0 <= value < 1:
        raise ScenarioInvariantError(f"{where} must lie in [0, 1), got {value!r}")


def _check_source(src: dict, where: str):
    if not isinstance(src, dict):
        raise ScenarioInvariantError(f"{where} must be an object")
    kind = src.get("kind")
    if kind == "deterministic":
        _positive(src.get("period"), f"{where}.period")
    elif kind == "poisson":
        _positive(src.get("rate"), f"{where}.rate")
    elif kind == "gcra_shaped":
        _positive(src.get("T"), f"{where}.T")
        tau = src.get("tau", 0)
        if not isinstance(tau, (int, float)) or tau < 0:
            raise ScenarioInvariantError(f"{where}.tau must be nonnegative")
        _check_source(src.get("inner"), f"{where}.inner")
    else:
        raise ScenarioInvariantError(f"{where}.kind: unknown source kind {kind!r}")


def _check_server(srv: dict, where: str):
    if not isinstance(srv, dict):
        raise ScenarioInvariantError(f"{where} must be an object")
    kind = srv.get("kind")
    if kind == "constant":
        _positive(srv.get("T"), f"{where}.T")
    elif kind == "slotted_wireless":
        _positive(srv.get("delta"), f"{where}.delta")
        _probability(srv.get("Pe"), f"{where}.Pe")
    else:
        raise ScenarioInvariantError(f"{where}.kind: unknown server kind {kind!r}")


def validate(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioParseError("scenario must be a JSON object")
    for key in ("flows", "nodes", "topology"):
        if key not in raw:
            raise ScenarioParseError(f"missing required field {key!r}")
    flows, nodes = raw["flows"], raw["nodes"]
    if not isinstance(flows, list) or not flows:
        raise ScenarioInvariantError("flows must be a non-empty list")
    if not isinstance(nodes, list) or not nodes:
        raise ScenarioInvariantError("nodes must be a non-empty list")
    fnames, nnames = set(), set()
    for i, f in enumerate(flows):
        name = f.get("name")
        if not isinstance(name, str) or name in fnames:
            raise ScenarioInvariantError(f"flows[{i}].name must be a unique string")
        fnames.add(name)
        _check_source(f.get("source"), f"flows[{i}].source")
        m = f.get("model")
        if isinstance(m, dict) and m.get("type") == "md1_vsd":
            _positive(m.get("mu"), f"flows[{i}].model.mu")
            _positive(m.get("D"), f"flows[{i}].model.D")
            if m["mu"] * m["D"] >= 1:
                raise ScenarioInvariantError(f"flows[{i}].model: mu*D must be below 1")
    for i, n in enumerate(nodes):
        name = n.get("name")
        if not isinstance(name, str) or name in nnames:
            raise ScenarioInvariantError(f"nodes[{i}].name must be a unique string")
        nnames.add(name)
        _check_server(n.get("server"), f"nodes[{i}].server")
        m = n.get("model")
        if isinstance(m, dict) and m.get("type") == "wireless":
            _probability(m.get("Pe"), f"nodes[{i}].model.Pe")
    topo = raw["topology"]
    if not isinstance(topo, dict):
        raise ScenarioParseError("topology must be an object")
    for flow, path in topo.get("paths", {}).items():
        if flow not in fnames:
            raise ScenarioReferenceError(f"topology.paths: unresolved reference to flow {flow!r}")
        if not isinstance(path, list) or not path:
            raise ScenarioInvariantError(f"topology.paths.{flow} must be a non-empty node list")
        for node in path:
            if node not in nnames:
                raise ScenarioReferenceError(
                    f"topology.paths.{flow}: unresolved reference to node {node!r}")
        if len(set(path)) != len(path):
            raise ScenarioInvariantError(f"topology.paths.{flow} revisits a node (not a path)")
    for i, agg in enumerate(topo.get("aggregates", [])):
        members = agg.get("flows", [])
        for flow in members:
            if flow not in fnames:
                raise ScenarioReferenceError(
                    f"topology.aggregates[{i}].flows: unresolved reference to flow {flow!r}")
        if not 1 <= len(members) <= 2:
            raise ScenarioInvariantError(
                f"topology.aggregates[{i}]: a FIFO aggregate holds one or two flows")
        if agg.get("node") not in nnames:
            raise ScenarioReferenceError(
                f"topology.aggregates[{i}].node: unresolved reference to node {agg.get('node')!r}")
    for prop in raw.get("analysis", ["delay"]):
        if prop not in PROPERTIES:
            raise ScenarioInvariantError(f"analysis: unknown property {prop!r}")
    eta = raw.get("eta", "auto")
    etas = eta if isinstance(eta, list) else [eta]
    for e in etas:
        if e != "auto":
            _positive(e, "eta")
    g = raw.get("grid", {})
    try:
        GridSpec(float(g.get("step", 0.05)), float(g.get("horizon", 40.0)))
    except (ValueError, TypeError) as exc:
        raise ScenarioInvariantError(f"grid: {exc}") from None
    sim = raw.get("simulation", {})
    for key in ("packets", "replications"):
        if key in sim:
            _positive(sim[key], f"simulation.{key}")
    if sim.get("packets", 1) * sim.get("replications", 1) > MAX_SIMULATED_PACKETS:
        raise ScenarioInvariantError(
            f"simulation: packets x replications exceeds the cap of {MAX_SIMULATED_PACKETS}")
    try:
        sc = Scenario(copy.deepcopy(raw))
        for f in sc.flow_names:
            sc.source(f)
        for n in sc.node_names:
            sc.server(n)
    except SimulationError as exc:
        raise ScenarioInvariantError(str(exc)) from None
    return sc


def loads(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return validate(raw)


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {p}: {exc.strerror}") from None
    return loads(text)
