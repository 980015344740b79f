"""Scenario execution: bounds, simulation oracles, dominance verdicts, output files."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (backlog_bound, concatenate, delay_bound, leftover_service_trace,
                       leftover_statistic, output_characterization,
                       select_eta, superpose)
from .curves import GridSpec
from .models import (ModelError, ServerModel, TrafficModel, as_server_kind, id_to_cs,
                     iat_to_vsd, vbc_to_vsd)
from .scenario import Scenario
from .simulator import (EmpiricalCCDF, PacketTrace, aggregate_fifo, check_dominance,
                        cs_statistic, empirical_backlog, generate_arrivals, iat_tail,
                        run_tandem, serve_fifo, vsd_statistic)

OUTPUT_MAX_LAG = 100
SELECTION_PROB = 1e-3


@dataclass
class PropertyResult:
    prop: str
    target: str
    xs: np.ndarray
    bound: Optional[np.ndarray] = None
    levels: Optional[np.ndarray] = None
    empirical: Optional[np.ndarray] = None
    samples: int = 0
    deterministic: bool = False
    info: dict = field(default_factory=dict)
    verdict: Optional[dict] = None

    @property
    def filename(self) -> str:
        return f"{self.prop}_{self.target}.csv"

    def write_csv(self, path: Path):
        cols = ["x"]
        data = [self.xs]
        if self.levels is not None:
            cols.append("level")
            data.append(self.levels)
        if self.bound is not None:
            cols.append("bound")
            data.append(self.bound)
        if self.empirical is not None:
            cols.append("empirical")
            data.append(self.empirical)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*data):
                w.writerow([repr(float(v)) for v in row])

    def summary(self) -> dict:
        out = {"property": self.prop, "target": self.target, "csv": self.filename}
        out.update(self.info)
        if self.empirical is not None:
            out["samples"] = self.samples
        if self.verdict is not None:
            out["verdict"] = self.verdict
        return out


@dataclass
class Report:
    scenario: str
    mode: str
    grid: GridSpec
    properties: list
    runtime: float = 0.0

    @property
    def passed(self) -> Optional[bool]:
        if self.mode != "verify":
            return None
        return all(p.verdict is not None and p.verdict["passed"] for p in self.properties)

    def to_json(self) -> dict:
        return {"scenario": self.scenario, "mode": self.mode,
                "grid": {"step": self.grid.step, "horizon": self.grid.horizon},
                "passed": self.passed,
                "properties": [p.summary() for p in self.properties],
                "meta": {"version": __version__, "runtime_seconds": round(self.runtime, 3)}}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for p in self.properties:
            p.write_csv(out / p.filename)
        path = out / "report.json"
        path.write_text(json.dumps(self.to_json(), indent=2, default=_json_default))
        return path


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))


def _finite(v: float):
    return float(v) if math.isfinite(v) else "unbounded"


# ---------------------------------------------------------------------------
# analysis side
# ---------------------------------------------------------------------------

def _as_vsd(model: TrafficModel, eta: Optional[float], grid: GridSpec) -> TrafficModel:
    if model.kind == "IAT":
        if eta is None:
            raise ModelError("IAT traffic needs an eta to become VSD")
        return iat_to_vsd(model, eta, grid)
    if model.kind == "VBC":
        return vbc_to_vsd(model, grid)
    return model


def _path_server(nodes: list, eta: Optional[float], grid: GridSpec, cgrid) -> ServerModel:
    """Single-node paths use the node model as is; longer paths are concatenated."""
    if len(nodes) == 1:
        return as_server_kind(nodes[0], "ID")
    if any(n.kind == "ID" for n in nodes) and eta is None:
        raise ModelError("concatenating ID servers needs an eta")
    cs = [id_to_cs(n, eta, grid) if n.kind == "ID" else as_server_kind(n, "CS") for n in nodes]
    return concatenate(cs, grid, cgrid)


def _needs_eta(traffic: TrafficModel, nodes: list) -> bool:
    return traffic.kind == "IAT" or (len(nodes) > 1 and any(n.kind == "ID" for n in nodes))


def _with_eta(sc: Scenario, build):
    """Run ``build(eta)`` for the scenario's eta choice, selecting when several exist."""
    etas = sc.etas
    if len(etas) == 1:
        return etas[0], build(etas[0]), None
    choice = select_eta(lambda e: build(e)[0], etas, SELECTION_PROB)
    cands = [{"eta": e, "quantile": _finite(q), "error": err} for e, q, err in choice.candidates]
    return choice.eta, build(choice.eta), cands


def analyze(sc: Scenario) -> tuple[list, dict]:
    """All requested bounds; raises StabilityError before anything is emitted."""
    grid, cgrid = sc.grid, sc.curve_grid
    xs = grid.points()
    results, context = [], {"paths": {}, "aggregates": []}
    props = sc.analysis
    for flow, path in sc.paths.items():
        traffic = sc.traffic_model(flow)
        nodes = [sc.server_model(n) for n in path]
        eta_needed = _needs_eta(traffic, nodes)

        def build(eta):
            t = _as_vsd(traffic, eta, grid)
            s = _path_server(nodes, eta, grid, cgrid)
            return delay_bound(t, s, grid, cgrid), t, s

        if eta_needed:
            eta, (db, t_vsd, srv), cands = _with_eta(sc, build)
        else:
            eta, cands = None, None
            db, t_vsd, srv = build(None)
        context["paths"][flow] = {"server": srv, "traffic": t_vsd}
        base = {"eta": eta, "stability": db.stability.to_json()}
        if cands:
            base["eta_candidates"] = cands
        deterministic = t_vsd.bound.is_deterministic and srv.bound.is_deterministic
        if "delay" in props:
            results.append(PropertyResult("delay", flow, xs, db(xs), deterministic=deterministic,
                                          info=dict(base, offset=db.offset,
                                                    raw_offset=_finite(db.raw_offset))))
        if "backlog" in props:
            bb = backlog_bound(t_vsd, srv, grid, cgrid)
            results.append(PropertyResult("backlog", flow, xs, bb.probs, levels=bb.levels,
                                          deterministic=deterministic, info=dict(base)))
        if "output" in props and len(path) == 1:
            out = output_characterization(t_vsd, srv, grid, cgrid)
            context["paths"][flow]["output"] = out
            results.append(PropertyResult("output", flow, xs, out.bound(xs),
                                          deterministic=deterministic,
                                          info=dict(base, output_curve=out.curve.to_json())))
        if "concatenation" in props:
            results.append(PropertyResult("concatenation", flow, xs, srv.bound(xs),
                                          deterministic=srv.bound.is_deterministic,
                                          info=dict(base, curve=srv.curve.to_json())))
    for i, agg in enumerate(sc.aggregates):
        members = agg["flows"]
        node = sc.server_model(agg["node"])
        models = [sc.traffic_model(f) for f in members]
        entry = {"members": members, "node": node}
        tag = "+".join(members)
        if "superposition" in props:
            eta = sc.etas[0] if any(m.kind == "IAT" for m in models) else None
            vsd = [_as_vsd(m, eta, grid) for m in models]
            sup = superpose(vsd, grid)
            entry["superposed"] = sup
            results.append(PropertyResult("superposition", tag, xs, sup.bound(xs),
                                          deterministic=sup.bound.is_deterministic,
                                          info={"eta": eta, "curve": sup.curve.to_json()}))
        if "leftover" in props and len(members) == 2:
            det = [k for k, m in enumerate(models) if m.kind == "DET"]
            if not det:
                raise ModelError(f"aggregate {tag}: leftover service needs a DET cross flow")
            cross = det[-1]
            tagged = 1 - cross
            entry["leftover"] = (tagged, cross, models[cross])
            srv = as_server_kind(node, "ID")
            results.append(PropertyResult("leftover", members[tagged], xs, srv.bound(xs),
                                          deterministic=srv.bound.is_deterministic,
                                          info={"cross_flow": members[cross]}))
        context["aggregates"].append(entry)
    return results, context


# ---------------------------------------------------------------------------
# simulation side
# ---------------------------------------------------------------------------

def _flow_index(sc: Scenario, flow: str) -> int:
    return sc.flow_names.index(flow)


def _cross_length(sc: Scenario, flow: str, horizon_time: float) -> int:
    src = sc.source(flow)
    spacing = {"deterministic": src.period, "poisson": 1.0 / src.rate if src.rate else 0,
               "gcra_shaped": src.T}[src.kind]
    return max(int(horizon_time / spacing) + 10, 2)


def _simulate_one(sc: Scenario, rep: int, context: Optional[dict], mode: str) -> dict:
    """One replication; returns tail counts keyed by (property, target)."""
    sim = sc.simulation
    grid = sc.grid
    xs = grid.points()
    packets, seed = sim["packets"], sim["seed"]
    tails = {}
    props = sc.analysis
    for flow, path in sc.paths.items():
        k = _flow_index(sc, flow)
        arr = generate_arrivals(sc.source(flow), packets, seed, flow=k, replication=rep)
        res = run_tandem(arr, [sc.server(n) for n in path], seed, flow=k, replication=rep)
        tr = res.final
        if mode == "simulate" or "delay" in props:
            tails[("delay", flow)] = EmpiricalCCDF.from_samples(tr.delays, xs)
        if mode == "simulate" or "backlog" in props:
            tgrid = GridSpec(grid.step, math.ceil(tr.departures.max() / grid.step) * grid.step)
            b = empirical_backlog(tr, tgrid, levels=np.arange(0.0, 4096.0))
            tails[("backlog", flow)] = b
        if context is None:
            continue
        ctx = context["paths"][flow]
        if "output" in props and "output" in ctx:
            dep = PacketTrace(np.concatenate([[0.0], np.sort(tr.departures[1:])]))
            tails[("output", flow)] = iat_tail(dep, ctx["output"].curve, xs, OUTPUT_MAX_LAG)
        if "concatenation" in props:
            tails[("concatenation", flow)] = EmpiricalCCDF.from_samples(
                cs_statistic(tr, ctx["server"].curve), xs)
    for i, agg in enumerate(sc.aggregates):
        members = agg["flows"]
        idx = [_flow_index(sc, f) for f in members]
        lengths = [packets] * len(members)
        leftover = context is not None and "leftover" in context["aggregates"][i]
        if leftover:
            tagged, cross, _ = context["aggregates"][i]["leftover"]
            probe = generate_arrivals(sc.source(members[tagged]), packets, seed,
                                      flow=idx[tagged], replication=rep)
            # the cross flow must keep competing for the whole tagged trace
            lengths[cross] = max(packets, _cross_length(sc, members[cross], probe.arrivals[-1]))
        traces = [generate_arrivals(sc.source(f), n, seed, flow=k, replication=rep)
                  for f, k, n in zip(members, idx, lengths)]
        merged = aggregate_fifo(traces, seed, replication=rep)
        out = serve_fifo(merged.trace, sc.server(agg["node"]), seed, node=1000 + i,
                         flow=0, replication=rep)
        for f, k in zip(members, range(len(members))):
            pos = merged.flow_positions(k)
            d = out.departures[pos] - out.arrivals[pos]
            tails[("aggregate_delay", f)] = EmpiricalCCDF.from_samples(d, xs)
        if context is None:
            continue
        entry = context["aggregates"][i]
        tag = "+".join(members)
        if "superposed" in entry:
            tails[("superposition", tag)] = EmpiricalCCDF.from_samples(
                vsd_statistic(merged.trace, entry["superposed"].curve), xs)
        if "leftover" in entry:
            tagged, cross, cross_model = entry["leftover"]
            pos = merged.flow_positions(tagged)
            a1 = traces[tagged]
            d1 = np.concatenate([[0.0], out.departures[pos]])
            node = as_server_kind(entry["node"], "ID")
            lo = leftover_service_trace(node, cross_model, a1)
            stat = leftover_statistic(a1.arrivals, d1, node.curve, lo.cross_counts)
            tails[("leftover", members[tagged])] = EmpiricalCCDF.from_samples(stat, xs)
    return tails


def simulate(sc: Scenario, context: Optional[dict], mode: str, jobs: int = 1) -> dict:
    reps = range(sc.simulation["replications"])
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_simulate_one, [sc] * len(reps), reps,
                                  [context] * len(reps), [mode] * len(reps)))
    else:
        parts = [_simulate_one(sc, r, context, mode) for r in reps]
    merged = {}
    for part in parts:
        for key, tail in part.items():
            merged[key] = tail if key not in merged else merged[key].merge(tail)
    return merged


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def run(sc: Scenario, mode: str, jobs: int = 1) -> Report:
    if mode not in ("analyze", "simulate", "verify"):
        raise ValueError(f"unknown mode {mode!r}")
    start = time.perf_counter()
    grid = sc.grid
    xs = grid.points()
    if mode == "simulate":
        tails = simulate(sc, None, mode, jobs)
        props = []
        for (prop, target), tail in sorted(tails.items()):
            props.append(PropertyResult(prop, target, tail.xs, empirical=tail.freqs,
                                        samples=tail.count))
        return Report(sc.name, mode, grid, props, time.perf_counter() - start)
    results, context = analyze(sc)
    if mode == "verify":
        tails = simulate(sc, context, mode, jobs)
        for r in results:
            tail = tails.get((r.prop, r.target))
            if tail is None:
                continue
            r.samples = tail.count
            if r.levels is not None:
                r.empirical = np.asarray(tail.at(r.levels), dtype=float)
            else:
                r.empirical = tail.freqs
            r.verdict = check_dominance(r.empirical, r.bound, tail.count, xs,
                                        exact=r.deterministic).summary()
    return Report(sc.name, mode, grid, results, time.perf_counter() - start)


def dump_curves(sc: Scenario, out_dir) -> list:
    """Write every model's curve (on the packet lattice) and bound (on the x-grid)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    xs = sc.grid.points()
    written = []
    models = [("flow", f, sc.traffic_model(f)) for f in sc.flow_names]
    models += [("node", n, sc.server_model(n)) for n in sc.node_names]
    for role, name, m in models:
        far = max(64.0, 4 * m.curve.last_x)
        ns = np.arange(0.0, far + 1.0)
        cpath = out / f"curve_{role}_{name}.csv"
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value"])
            for x, v in zip(ns, m.curve(ns)):
                w.writerow([repr(float(x)), repr(float(v))])
        bpath = out / f"bound_{role}_{name}.csv"
        with open(bpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "prob"])
            for x, v in zip(xs, m.bound(xs)):
                w.writerow([repr(float(x)), repr(float(v))])
        written += [cpath, bpath]
    return written
