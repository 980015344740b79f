"""Seeded packet-level simulation: sources, FIFO servers, tandems, FIFO merges.

Traces index packets from 1; index 0 holds the sentinel ``a(0) = d(0) = 0``.

Random streams: every draw comes from ``numpy.random.PCG64`` seeded with
``SeedSequence(seed, spawn_key=(crc32(component), flow, replication))``.
``component`` names the consumer (``"source"``, ``"server/<node index>"``,
``"merge"``), so each (component, flow, replication) triple owns an
independent stream and adding a node never perturbs another node's draws.
"""
from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .curves import Curve, GridSpec
from .models import ServerModel, TrafficModel


class SimulationError(ValueError):
    pass


def rng_stream(seed: int, component: str, flow: int = 0, replication: int = 0) -> np.random.Generator:
    key = (zlib.crc32(component.encode()), int(flow), int(replication))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


# ---------------------------------------------------------------------------
# traces and empirical tails
# ---------------------------------------------------------------------------

@dataclass
class PacketTrace:
    arrivals: np.ndarray
    departures: Optional[np.ndarray] = None
    flow_id: Optional[np.ndarray] = None

    def __post_init__(self):
        self.arrivals = np.asarray(self.arrivals, dtype=float)
        if self.arrivals[0] != 0:
            raise SimulationError("arrivals must start with the sentinel a(0) = 0")
        if np.any(np.diff(self.arrivals) < 0):
            raise SimulationError("arrivals must be wide-sense increasing")
        if self.departures is not None:
            self.departures = np.asarray(self.departures, dtype=float)
            if len(self.departures) != len(self.arrivals):
                raise SimulationError("arrivals and departures differ in length")

    @classmethod
    def from_times(cls, arrivals, departures=None, flow_id=None) -> "PacketTrace":
        """Build from per-packet times (no sentinel)."""
        a = np.concatenate([[0.0], np.asarray(arrivals, dtype=float)])
        d = None if departures is None else np.concatenate([[0.0], np.asarray(departures, dtype=float)])
        fid = None if flow_id is None else np.concatenate([[-1], np.asarray(flow_id, dtype=int)])
        return cls(a, d, fid)

    @property
    def n_packets(self) -> int:
        return len(self.arrivals) - 1

    @property
    def delays(self) -> np.ndarray:
        if self.departures is None:
            raise SimulationError("trace has no departures")
        return self.departures[1:] - self.arrivals[1:]

    def arrived_by(self, t) -> np.ndarray:
        """``A(t)``: packets with ``a(n) <= t``."""
        return np.searchsorted(self.arrivals[1:], t, side="right")

    def departed_by(self, t) -> np.ndarray:
        """``A*(t)``: packets with ``d(n) <= t``."""
        return np.searchsorted(np.sort(self.departures[1:]), t, side="right")

    def backlog(self, t) -> np.ndarray:
        return self.arrived_by(t) - self.departed_by(t)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "flow_id", "arrival", "departure"])
            for n in range(1, self.n_packets + 1):
                fid = 0 if self.flow_id is None else int(self.flow_id[n])
                dep = "" if self.departures is None else repr(float(self.departures[n]))
                w.writerow([n, fid, repr(float(self.arrivals[n])), dep])


@dataclass
class EmpiricalCCDF:
    """Tail frequencies ``#(samples > x) / count`` on a value grid."""
    xs: np.ndarray
    exceed: np.ndarray
    count: int

    @classmethod
    def empty(cls, xs) -> "EmpiricalCCDF":
        xs = np.asarray(xs, dtype=float)
        return cls(xs, np.zeros(len(xs), dtype=np.int64), 0)

    @classmethod
    def from_samples(cls, samples, xs) -> "EmpiricalCCDF":
        e = cls.empty(xs)
        e.add(samples)
        return e

    def add(self, samples):
        samples = np.asarray(samples, dtype=float).ravel()
        # number of grid points strictly below each sample
        below = np.searchsorted(self.xs, samples, side="left")
        hist = np.bincount(below, minlength=len(self.xs) + 1)
        self.exceed += np.cumsum(hist[::-1])[::-1][1:]
        self.count += len(samples)

    def merge(self, other: "EmpiricalCCDF") -> "EmpiricalCCDF":
        if not np.array_equal(self.xs, other.xs):
            raise SimulationError("cannot merge tails on different grids")
        return EmpiricalCCDF(self.xs.copy(), self.exceed + other.exceed, self.count + other.count)

    @property
    def freqs(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(len(self.xs))
        return self.exceed / self.count

    def at(self, x) -> np.ndarray:
        """Frequency at the largest grid point ``<= x`` (an over-estimate)."""
        idx = np.searchsorted(self.xs, np.asarray(x, dtype=float) + 1e-12, side="right") - 1
        f = self.freqs
        return np.where(idx < 0, 1.0, f[np.clip(idx, 0, len(f) - 1)])


@dataclass
class DominanceResult:
    passed: bool
    checked: int
    violations: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"passed": self.passed, "checked_points": self.checked,
                "violations": self.violations[:20]}


def check_dominance(freqs, bound, count: int, xs=None, min_mass: float = 1e-3,
                    sigmas: float = 2.0, exact: bool = False) -> DominanceResult:
    """Is the empirical tail below the bound everywhere it is measurable?

    Statistical mode checks grid points whose empirical frequency is at least
    ``min_mass`` and tolerates ``sigmas`` binomial standard deviations of the
    bound.  Exact mode (deterministic scenarios) checks every point with no
    slack beyond floating-point noise.
    """
    freqs = np.asarray(freqs, dtype=float)
    bound = np.asarray(bound, dtype=float)
    xs = np.arange(len(freqs)) if xs is None else np.asarray(xs, dtype=float)
    if exact:
        mask = np.ones(len(freqs), dtype=bool)
        slack = np.full(len(freqs), 1e-12)
    else:
        mask = freqs >= min_mass
        b = np.clip(bound, 0.0, 1.0)
        slack = sigmas * np.sqrt(b * (1 - b) / max(count, 1))
    bad = mask & (freqs > bound + slack)
    viol = [{"x": float(xs[i]), "empirical": float(freqs[i]), "bound": float(bound[i])}
            for i in np.flatnonzero(bad)]
    return DominanceResult(not viol, int(mask.sum()), viol)


# ---------------------------------------------------------------------------
# sources and servers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceSpec:
    kind: str
    period: float = 0.0
    rate: float = 0.0
    T: float = 0.0
    tau: float = 0.0
    inner: Optional["SourceSpec"] = None

    def __post_init__(self):
        if self.kind == "deterministic":
            if self.period <= 0:
                raise SimulationError("period must be positive")
        elif self.kind == "poisson":
            if self.rate <= 0:
                raise SimulationError("rate must be positive")
        elif self.kind == "gcra_shaped":
            if self.T <= 0 or self.tau < 0 or self.inner is None:
                raise SimulationError("gcra_shaped needs T > 0, tau >= 0 and an inner source")
        else:
            raise SimulationError(f"unknown source kind {self.kind!r}")

    def to_json(self) -> dict:
        if self.kind == "deterministic":
            return {"kind": "deterministic", "period": self.period}
        if self.kind == "poisson":
            return {"kind": "poisson", "rate": self.rate}
        return {"kind": "gcra_shaped", "T": self.T, "tau": self.tau, "inner": self.inner.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "SourceSpec":
        kind = d.get("kind")
        if kind == "deterministic":
            return cls(kind, period=float(d["period"]))
        if kind == "poisson":
            return cls(kind, rate=float(d["rate"]))
        if kind == "gcra_shaped":
            return cls(kind, T=float(d["T"]), tau=float(d["tau"]), inner=cls.from_json(d["inner"]))
        raise SimulationError(f"unknown source kind {kind!r}")


@dataclass(frozen=True)
class ServerSpec:
    kind: str
    T: float = 0.0
    delta: float = 0.0
    Pe: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.T <= 0:
                raise SimulationError("service time must be positive")
        elif self.kind == "slotted_wireless":
            if self.delta <= 0:
                raise SimulationError("slot length must be positive")
            if not 0 <= self.Pe < 1:
                raise SimulationError(f"Pe must lie in [0, 1), got {self.Pe}")
        else:
            raise SimulationError(f"unknown server kind {self.kind!r}")

    @property
    def min_service(self) -> float:
        return self.T if self.kind == "constant" else self.delta

    def to_json(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "T": self.T}
        return {"kind": "slotted_wireless", "delta": self.delta, "Pe": self.Pe}

    @classmethod
    def from_json(cls, d: dict) -> "ServerSpec":
        kind = d.get("kind")
        if kind == "constant":
            return cls(kind, T=float(d["T"]))
        if kind == "slotted_wireless":
            return cls(kind, delta=float(d["delta"]), Pe=float(d["Pe"]))
        raise SimulationError(f"unknown server kind {kind!r}")


def _gcra_shape(times: np.ndarray, T: float, tau: float) -> np.ndarray:
    # a(n) = max(inner(n), max_{0<=m<n} a(m) + T(n-m) - tau), sentinel included
    out = np.empty_like(times)
    best = 0.0  # max_{m<n} a(m) - T m, starting from the sentinel
    for i, t in enumerate(times):
        n = i + 1
        a = max(t, best + T * n - tau)
        out[i] = a
        best = max(best, a - T * n)
    return out


def _source_times(spec: SourceSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "deterministic":
        return spec.period * np.arange(1, n + 1, dtype=float)
    if spec.kind == "poisson":
        return np.cumsum(rng.exponential(1.0 / spec.rate, size=n))
    return _gcra_shape(_source_times(spec.inner, n, rng), spec.T, spec.tau)


def generate_arrivals(spec: SourceSpec, n_packets: int, seed: int,
                      flow: int = 0, replication: int = 0) -> PacketTrace:
    if n_packets < 1:
        raise SimulationError("n_packets must be at least 1")
    rng = rng_stream(seed, "source", flow, replication)
    return PacketTrace.from_times(_source_times(spec, n_packets, rng))


def service_times(spec: ServerSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "constant":
        return np.full(n, spec.T)
    return spec.delta * rng.geometric(1.0 - spec.Pe, size=n)


def serve_fifo(arrivals: PacketTrace, spec: ServerSpec, seed: int, node: int = 0,
               flow: int = 0, replication: int = 0) -> PacketTrace:
    """FIFO service ``d(n) = max[a(n), d(n-1)] + s(n)``.

    On a slotted link transmission starts only on a slot boundary, so the
    start is ``max[ceil_slot(a(n)), d(n-1)]`` and ``s(n)`` is a geometric
    number of slots.
    """
    rng = rng_stream(seed, f"server/{node}", flow, replication)
    a = arrivals.arrivals
    s = service_times(spec, arrivals.n_packets, rng)
    d = np.zeros_like(a)
    prev = 0.0
    if spec.kind == "constant":
        for n in range(1, len(a)):
            prev = max(a[n], prev) + s[n - 1]
            d[n] = prev
    else:
        delta = spec.delta
        for n in range(1, len(a)):
            start = math.ceil(a[n] / delta - 1e-9) * delta
            prev = max(start, prev) + s[n - 1]
            d[n] = prev
    return PacketTrace(a.copy(), d, None if arrivals.flow_id is None else arrivals.flow_id.copy())


@dataclass
class TandemResult:
    final: PacketTrace
    stages: list

    @property
    def delays(self) -> np.ndarray:
        return self.final.delays


def run_tandem(arrivals: PacketTrace, servers: Sequence[ServerSpec], seed: int,
               flow: int = 0, replication: int = 0) -> TandemResult:
    if not servers:
        raise SimulationError("a tandem needs at least one server")
    stages = []
    cur = arrivals
    for i, spec in enumerate(servers):
        out = serve_fifo(cur, spec, seed, node=i, flow=flow, replication=replication)
        stages.append(out)
        cur = PacketTrace(out.departures.copy(), None, out.flow_id)
    final = PacketTrace(arrivals.arrivals.copy(), stages[-1].departures.copy(), arrivals.flow_id)
    return TandemResult(final, stages)


@dataclass
class MergedTrace:
    trace: PacketTrace
    index_in_flow: np.ndarray  # position of each merged packet within its own flow (1-based)

    def flow_positions(self, flow: int) -> np.ndarray:
        return np.flatnonzero(self.trace.flow_id == flow)


def aggregate_fifo(traces: Sequence[PacketTrace], seed: int, replication: int = 0) -> MergedTrace:
    """Merge flows by arrival instant; exact ties are ordered uniformly at random."""
    if not traces:
        raise SimulationError("nothing to merge")
    rng = rng_stream(seed, "merge", 0, replication)
    times = np.concatenate([t.arrivals[1:] for t in traces])
    fid = np.concatenate([np.full(t.n_packets, i) for i, t in enumerate(traces)])
    pos = np.concatenate([np.arange(1, t.n_packets + 1) for t in traces])
    order = np.lexsort((rng.random(len(times)), times))
    merged = PacketTrace.from_times(times[order], flow_id=fid[order])
    return MergedTrace(merged, np.concatenate([[0], pos[order]]))


# ---------------------------------------------------------------------------
# trace statistics
# ---------------------------------------------------------------------------

def _affine_pieces(curve: Curve):
    """Affine pieces ``(slope, intercept)`` if ``curve`` is convex and continuous, else None."""
    xs, vs = curve.xs, curve.vs
    if math.isinf(curve.tail_slope):
        return None
    pieces = []
    for i in range(len(xs) - 1):
        dx = xs[i + 1] - xs[i]
        if dx <= 0:
            return None  # jump
        s = (vs[i + 1] - vs[i]) / dx
        pieces.append((s, vs[i] - s * xs[i]))
    pieces.append((curve.tail_slope, vs[-1] - curve.tail_slope * xs[-1]))
    slopes = [p[0] for p in pieces]
    if any(b < a - 1e-12 for a, b in zip(slopes, slopes[1:])):
        return None
    return pieces


def max_plus_trace_conv(a: np.ndarray, curve: Curve, brute: bool = False) -> np.ndarray:
    """``sup_{0<=m<=n} a(m) + curve(n-m)`` for every ``n`` (``a`` includes the sentinel).

    Convex curves are a maximum of affine pieces ``s k + c``, for which the
    supremum is ``s n + c + cummax_m (a(m) - s m)``: linear time.  Other
    curves fall back to the quadratic scan.
    """
    n_idx = np.arange(len(a), dtype=float)
    pieces = None if brute else _affine_pieces(curve)
    if pieces is None:
        lam = curve(n_idx)
        out = np.empty_like(a)
        for n in range(len(a)):
            out[n] = np.max(a[: n + 1] + lam[n::-1])
        return out
    out = np.full_like(a, -np.inf)
    for s, c in pieces:
        out = np.maximum(out, s * n_idx + c + np.maximum.accumulate(a - s * n_idx))
    return out


def vsd_statistic(trace: PacketTrace, lam: Curve, brute: bool = False) -> np.ndarray:
    a = trace.arrivals
    return (max_plus_trace_conv(a, lam, brute) - a)[1:]


def msd_statistic(trace: PacketTrace, lam: Curve, brute: bool = False) -> np.ndarray:
    return np.maximum.accumulate(vsd_statistic(trace, lam, brute))


def id_statistic(trace: PacketTrace, gamma: Curve, brute: bool = False) -> np.ndarray:
    if trace.departures is None:
        raise SimulationError("trace has no departures")
    return (trace.departures - max_plus_trace_conv(trace.arrivals, gamma, brute))[1:]


def cs_statistic(trace: PacketTrace, gamma: Curve, brute: bool = False) -> np.ndarray:
    return np.maximum.accumulate(id_statistic(trace, gamma, brute))


def iat_tail(trace: PacketTrace, lam: Curve, xs, max_lag: Optional[int] = None) -> EmpiricalCCDF:
    """Tail of ``lambda(k) - [a(n) - a(n-k)]`` pooled over all pairs with lag ``k >= 1``."""
    a = trace.arrivals
    N = len(a) - 1
    emp = EmpiricalCCDF.empty(xs)
    top = N if max_lag is None else min(N, max_lag)
    for k in range(1, top + 1):
        emp.add(lam(float(k)) - (a[k:] - a[:-k]))
    return emp


def trace_statistics(trace: PacketTrace, model: Union[TrafficModel, ServerModel],
                     grid: GridSpec, brute: bool = False,
                     max_lag: Optional[int] = None) -> EmpiricalCCDF:
    """Empirical tail of the defining statistic of ``model``'s kind on ``trace``."""
    if trace.n_packets < 2:
        raise SimulationError("trace needs at least two packets")
    xs = grid.points()
    kind = model.kind
    if isinstance(model, ServerModel):
        fn = {"DET": id_statistic, "ID": id_statistic, "CS": cs_statistic}[kind]
        return EmpiricalCCDF.from_samples(fn(trace, model.curve, brute), xs)
    if kind == "IAT":
        return iat_tail(trace, model.curve, xs, max_lag)
    if kind in ("VSD", "DET"):
        return EmpiricalCCDF.from_samples(vsd_statistic(trace, model.curve, brute), xs)
    if kind == "MSD":
        return EmpiricalCCDF.from_samples(msd_statistic(trace, model.curve, brute), xs)
    if kind == "VBC":
        return EmpiricalCCDF.from_samples(vbc_statistic(trace, model.curve), xs)
    raise SimulationError(f"no statistic for kind {kind}")


def vbc_statistic(trace: PacketTrace, alpha: Curve) -> np.ndarray:
    """``sup_{0<=s<=t} [A(s, t) - alpha(t - s)]`` at each arrival instant ``t``.

    ``A(s, t)`` counts arrivals in ``(s, t]``.  Between arrivals the bracket
    only shrinks as ``s`` grows, so the supremum is reached at ``s = 0`` or
    as ``s`` approaches an arrival instant from below.
    """
    a = trace.arrivals[1:]
    upto = np.searchsorted(a, a, side="right")   # A(t) at t = a(n)
    before = np.searchsorted(a, a, side="left")  # #{arrivals < a(m)}
    at_zero = np.searchsorted(a, 0.0, side="right")
    out = np.empty(len(a))
    for n in range(len(a)):
        t, cnt = a[n], upto[n]
        from_zero = cnt - at_zero - alpha(t)
        gaps = cnt - before[:cnt] - alpha(t - a[:cnt])
        out[n] = max(from_zero, gaps.max())
    return out


def delay_tail(trace: PacketTrace, xs) -> EmpiricalCCDF:
    return EmpiricalCCDF.from_samples(trace.delays, xs)


def backlog_at_arrivals(trace: PacketTrace) -> np.ndarray:
    """``B(a(n)) = n - #{m : d(m) <= a(n)}``, including packet ``n`` itself."""
    a, d = trace.arrivals[1:], np.sort(trace.departures[1:])
    return np.arange(1, len(a) + 1) - np.searchsorted(d, a, side="right")


def empirical_backlog(trace: PacketTrace, time_grid: GridSpec,
                      levels=None) -> EmpiricalCCDF:
    """Tail of ``B(t) = A(t) - A*(t)`` sampled at the instants of ``time_grid``."""
    if trace.departures is None:
        raise SimulationError("trace has no departures")
    ts = time_grid.points()
    ts = ts[ts <= trace.departures.max()]
    b = trace.backlog(ts)
    if levels is None:
        levels = np.arange(0, int(b.max()) + 2, dtype=float)
    return EmpiricalCCDF.from_samples(b, levels)
