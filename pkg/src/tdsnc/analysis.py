"""Bound calculators: delay, backlog, output, concatenation, superposition,
leftover service, and the stability check that guards them."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .bounding import BoundingFn, ccdf_min_plus_conv
from .curves import (Curve, GridSpec, horizontal_deviation, max_plus_conv, max_plus_deconv,
                     min_plus_deconv_at, upper_pseudo_inverse)
from .models import (DEFAULT_BOUND_GRID, ModelError, ServerModel, TrafficModel, as_server_kind,
                     as_traffic_kind, cs_to_id, id_to_cs, vbc_to_vsd, vsd_to_vbc)
from .simulator import PacketTrace

STABILITY_TOL = 1e-12


@dataclass(frozen=True)
class StabilityReport:
    lambda_rate: float
    gamma_rate: float
    stable: bool

    def to_json(self) -> dict:
        return {"lambda_rate": self.lambda_rate, "gamma_rate": self.gamma_rate,
                "stable": self.stable}


class StabilityError(ModelError):
    def __init__(self, report: StabilityReport):
        super().__init__(f"unstable: service rate {report.gamma_rate} per packet exceeds "
                         f"inter-arrival rate {report.lambda_rate}")
        self.report = report


def stability_check(lam: Curve, gamma: Curve) -> StabilityReport:
    stable = gamma.tail_slope - lam.tail_slope <= STABILITY_TOL
    return StabilityReport(lam.tail_slope, gamma.tail_slope, bool(stable))


def _stable_pair(traffic: TrafficModel, server: ServerModel):
    traffic = as_traffic_kind(traffic, "VSD")
    server = as_server_kind(server, "ID")
    rep = stability_check(traffic.curve, server.curve)
    if not rep.stable:
        raise StabilityError(rep)
    return traffic, server, rep


@dataclass(frozen=True)
class DelayBound:
    bound: BoundingFn        # x -> bound on P{D(n) > x}
    offset: float            # max(gamma (/) lambda (0), 0)
    raw_offset: float        # unclamped deconvolution value
    core: BoundingFn         # j (x) h before the shift
    stability: StabilityReport

    def __call__(self, x):
        return self.bound(x)

    def quantile(self, prob: float) -> float:
        """Smallest grid ``x`` with bound ``<= prob`` (``inf`` if none)."""
        xs = np.arange(len(self.bound.values)) * self.bound.step
        ok = np.flatnonzero(self.bound.values <= prob)
        return float(xs[ok[0]]) if len(ok) else math.inf


def delay_bound(traffic: TrafficModel, server: ServerModel,
                grid: Optional[GridSpec] = None,
                curve_grid: Optional[GridSpec] = None) -> DelayBound:
    """``P{D(n) > x} <= [j (x) h](x - gamma (/) lambda (0))``."""
    traffic, server, rep = _stable_pair(traffic, server)
    grid = grid or DEFAULT_BOUND_GRID
    raw = min_plus_deconv_at(server.curve, traffic.curve, 0.0, curve_grid)
    offset = max(raw, 0.0)
    core = ccdf_min_plus_conv([server.bound, traffic.bound], grid)
    xs = grid.points()
    env = core.exp_envelope
    if env is not None and env[0] > 0 and math.isfinite(env[1]):
        env = (env[0] * math.exp(env[1] * offset), env[1])
    elif env is not None:
        env = None  # a zero envelope does not survive the shift

    bound = BoundingFn.table(grid.step, core(xs - offset), env)
    return DelayBound(bound, offset, raw, core, rep)


@dataclass(frozen=True)
class BacklogBound:
    xs: np.ndarray
    levels: np.ndarray
    probs: np.ndarray
    stability: StabilityReport

    def rows(self):
        return list(zip(self.xs.tolist(), self.levels.tolist(), self.probs.tolist()))


def backlog_bound(traffic: TrafficModel, server: ServerModel,
                  grid: Optional[GridSpec] = None,
                  curve_grid: Optional[GridSpec] = None) -> BacklogBound:
    """Pairs ``(H(lambda, gamma + x), [j (x) h](x))`` over the grid."""
    traffic, server, rep = _stable_pair(traffic, server)
    grid = grid or DEFAULT_BOUND_GRID
    xs = grid.points()
    core = ccdf_min_plus_conv([server.bound, traffic.bound], grid)
    levels = np.array([horizontal_deviation(traffic.curve, server.curve, float(x), curve_grid)
                       for x in xs])
    return BacklogBound(xs, levels, core(xs), rep)


def output_characterization(traffic: TrafficModel, server: ServerModel,
                            grid: Optional[GridSpec] = None,
                            curve_grid: Optional[GridSpec] = None) -> TrafficModel:
    """IAT model ``<lambda (/)max gamma, j (x) h>`` of the departures."""
    traffic, server, _ = _stable_pair(traffic, server)
    grid = grid or DEFAULT_BOUND_GRID
    curve = max_plus_deconv(traffic.curve, server.curve, curve_grid)
    core = ccdf_min_plus_conv([server.bound, traffic.bound], grid)
    return TrafficModel("IAT", curve, core)


def concatenate(servers: Sequence[ServerModel], grid: Optional[GridSpec] = None,
                curve_grid: Optional[GridSpec] = None) -> ServerModel:
    """End-to-end CS model: max-plus convolution of curves, Lemma-1 sum of bounds."""
    if not servers:
        raise ModelError("concatenate needs at least one server")
    grid = grid or DEFAULT_BOUND_GRID
    cs = [as_server_kind(s, "CS") for s in servers]
    curve = cs[0].curve
    for s in cs[1:]:
        curve = max_plus_conv(curve, s.curve, curve_grid)
    if len(cs) == 1:
        return cs[0]
    bound = ccdf_min_plus_conv([s.bound for s in cs], grid)
    return ServerModel("CS", curve, bound)


def superpose(flows: Sequence[TrafficModel], grid: Optional[GridSpec] = None) -> TrafficModel:
    """VSD model of the FIFO aggregate: via counting curves, summed, then back."""
    if not flows:
        raise ModelError("superpose needs at least one flow")
    grid = grid or DEFAULT_BOUND_GRID
    vbcs = [vsd_to_vbc(f, grid) for f in flows]
    alpha = vbcs[0].curve
    for v in vbcs[1:]:
        alpha = alpha + v.curve
    f = ccdf_min_plus_conv([v.bound for v in vbcs], grid)
    return vbc_to_vsd(TrafficModel("VBC", alpha, f), grid)


# ---------------------------------------------------------------------------
# eta selection and end-to-end helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EtaChoice:
    eta: float
    result: object
    candidates: list  # (eta, quantile or inf, error message or None)


def select_eta(build: Callable[[float], DelayBound], etas: Sequence[float],
               prob: float = 1e-3) -> EtaChoice:
    """Pick the eta whose delay bound reaches ``prob`` earliest."""
    best, cands = None, []
    for eta in etas:
        try:
            res = build(eta)
        except ModelError as exc:
            cands.append((eta, math.inf, str(exc)))
            continue
        q = res.quantile(prob)
        cands.append((eta, q, None))
        if best is None or q < best[1]:
            best = (eta, q, res)
    if best is None:
        raise ModelError("no eta produced a valid bound: " + "; ".join(c[2] for c in cands))
    return EtaChoice(best[0], best[2], cands)


def end_to_end_delay(traffic: TrafficModel, servers: Sequence[ServerModel], eta: float,
                     grid: Optional[GridSpec] = None,
                     curve_grid: Optional[GridSpec] = None) -> DelayBound:
    """Convert every ID node to CS with ``eta``, concatenate, and bound the delay."""
    grid = grid or DEFAULT_BOUND_GRID
    cs = [id_to_cs(s, eta, grid) if s.kind == "ID" else as_server_kind(s, "CS") for s in servers]
    path = cs_to_id(concatenate(cs, grid, curve_grid))
    return delay_bound(traffic, path, grid, curve_grid)


# ---------------------------------------------------------------------------
# leftover service behind deterministic cross traffic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeftoverService:
    model: ServerModel          # curve n -> gamma(n + m(n)), bound j
    cross_counts: np.ndarray    # m(n) for the tagged packets, index 0 = sentinel
    tagged: PacketTrace

    def statistic(self, departures: np.ndarray, gamma: Curve) -> np.ndarray:
        return leftover_statistic(self.tagged.arrivals, departures, gamma, self.cross_counts)


def cross_count(cross: TrafficModel, t) -> np.ndarray:
    """``sup{q : lambda2(q) <= t}`` rounded down to whole packets."""
    alpha = upper_pseudo_inverse(as_traffic_kind(cross, "DET").curve)
    return np.floor(np.asarray(alpha(t), dtype=float) + 1e-9).astype(np.int64)


def leftover_service_trace(server: ServerModel, cross: TrafficModel,
                           tagged_arrivals: PacketTrace) -> LeftoverService:
    """Service left to the tagged flow: ``gamma(n + m(n))`` with the same bound.

    ``m(n)`` is the largest number of cross packets the deterministic cross
    curve allows before ``a1(n)``.
    """
    if cross.kind != "DET":
        raise ModelError("leftover service needs deterministic cross traffic")
    server = as_server_kind(server, "ID")
    a1 = tagged_arrivals.arrivals
    m = cross_count(cross, a1)
    m[0] = 0
    ns = np.arange(len(a1), dtype=float)
    vals = server.curve(ns + m)
    if np.any(np.diff(vals) < -1e-12):
        raise ModelError("leftover curve is not monotone; the hypothesis fails")
    slope = server.curve.tail_slope
    curve = Curve.from_samples(ns, vals, slope)
    return LeftoverService(ServerModel("ID", curve, server.bound), m, tagged_arrivals)


def leftover_statistic(a1: np.ndarray, d1: np.ndarray, gamma: Curve,
                       cross_counts: np.ndarray) -> np.ndarray:
    """``d1(n) - sup_{k<=n} [a1(k) + gamma(n - k + m(n))]`` for tagged packets ``n >= 1``.

    ``m(n)`` stays fixed inside the supremum: every cross packet counted by
    ``m(n)`` may sit ahead of any tagged packet ``k..n`` in the FIFO queue.
    """
    n_idx = np.arange(len(a1), dtype=float)
    if gamma.is_affine:
        s, c = gamma.tail_slope, gamma.vs[0]
        best = np.maximum.accumulate(a1 - s * n_idx)
        conv = best + s * (n_idx + cross_counts) + c
    else:
        conv = np.array([np.max(a1[: n + 1] + gamma(n - n_idx[: n + 1] + cross_counts[n]))
                         for n in range(len(a1))])
    return (d1 - conv)[1:]
