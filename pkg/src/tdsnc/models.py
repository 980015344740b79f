"""Traffic and server models, and the conversions between their flavors.

Traffic kinds (curves map packet index to time, except VBC which maps time
to a packet count):

    DET  deterministic arrival curve       a(n) - a(m) >= lambda(n-m)
    IAT  inter-arrival-time curve          P{lambda(n-m) - [a(n)-a(m)] > x} <= h(x)
    VSD  virtual-system-delay curve        P{a (x) lambda(n) - a(n) > x} <= h(x)
    MSD  maximum-virtual-system-delay      running max of the VSD statistic
    VBC  virtual-backlog-centric (space)   P{sup_s [A(s,t) - alpha(t-s)] > x} <= f(x)

Server kinds:

    DET  d(n) <= a (x) gamma(n)
    ID   P{d(n) - a (x) gamma(n) > x} <= j(x)
    CS   P{sup_{m<=n} [d(m) - a (x) gamma(m)] > x} <= j(x)

Here ``(x)`` is the max-plus convolution and ``gamma(k)`` is the time needed
to serve ``k + 1`` back-to-back packets (packet ``m`` through ``m + k``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounding import (BoundingFn, compose, erlang_lower_tail, eta_inflate,
                       md1_vsd_bound, tail_integral, wireless_service_bound)
from .curves import (Curve, GridSpec, lower_pseudo_inverse, sup_forward_gap,
                     sup_growth_gap, upper_pseudo_inverse)

TRAFFIC_KINDS = ("DET", "IAT", "VSD", "MSD", "VBC")
SERVER_KINDS = ("DET", "ID", "CS")

DEFAULT_BOUND_GRID = GridSpec(0.05, 40.0)


class ModelError(ValueError):
    pass


class CertificateError(ModelError):
    """A conversion needs a bounding function with a finite tail integral."""


@dataclass(frozen=True)
class TrafficModel:
    kind: str
    curve: Curve
    bound: BoundingFn = field(default_factory=BoundingFn.indicator)
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in TRAFFIC_KINDS:
            raise ModelError(f"unknown traffic kind {self.kind!r}")
        if self.kind == "DET" and not self.bound.is_deterministic:
            raise ModelError("a DET model carries the deterministic indicator bound")

    @property
    def is_time_domain(self) -> bool:
        return self.kind != "VBC"

    def to_json(self) -> dict:
        return {"kind": self.kind, "curve": self.curve.to_json(), "bound": self.bound.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "TrafficModel":
        return cls(d["kind"], Curve.from_json(d["curve"]),
                   BoundingFn.from_json(d.get("bound", {"kind": "indicator"})))


@dataclass(frozen=True)
class ServerModel:
    kind: str
    curve: Curve
    bound: BoundingFn = field(default_factory=BoundingFn.indicator)
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in SERVER_KINDS:
            raise ModelError(f"unknown server kind {self.kind!r}")
        if self.kind == "DET" and not self.bound.is_deterministic:
            raise ModelError("a DET model carries the deterministic indicator bound")

    def to_json(self) -> dict:
        return {"kind": self.kind, "curve": self.curve.to_json(), "bound": self.bound.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "ServerModel":
        return cls(d["kind"], Curve.from_json(d["curve"]),
                   BoundingFn.from_json(d.get("bound", {"kind": "indicator"})))


def as_traffic_kind(m: TrafficModel, kind: str) -> TrafficModel:
    """View ``m`` as ``kind`` when that is a pure weakening, else raise.

    A deterministic curve implies every time-domain flavor with the indicator
    bound; MSD implies VSD, and VSD implies IAT.
    """
    if m.kind == kind:
        return m
    implied = {"DET": ("IAT", "VSD", "MSD"), "MSD": ("VSD", "IAT"), "VSD": ("IAT",)}
    if kind in implied.get(m.kind, ()):
        return TrafficModel(kind, m.curve, m.bound, m.params)
    raise ModelError(f"a {m.kind} traffic model is needed as {kind}; convert it first")


def as_server_kind(m: ServerModel, kind: str) -> ServerModel:
    if m.kind == kind:
        return m
    implied = {"DET": ("ID", "CS"), "CS": ("ID",)}
    if kind in implied.get(m.kind, ()):
        return ServerModel(kind, m.curve, m.bound, m.params)
    raise ModelError(f"a {m.kind} server model is needed as {kind}; convert it first")


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def gcra_arrival(T: float, tau: float) -> TrafficModel:
    """Deterministic curve ``(T n - tau)+`` of a GCRA-shaped flow."""
    if T <= 0 or tau < 0:
        raise ModelError("GCRA needs T > 0 and tau >= 0")
    if tau == 0:
        curve = Curve.affine(T)
    else:
        curve = Curve([(0.0, 0.0), (tau / T, 0.0)], T)
    return TrafficModel("DET", curve, params={"T": T, "tau": tau})


def poisson_iat_arrival(rho: float, grid: Optional[GridSpec] = None,
                        max_gap: int = 200) -> TrafficModel:
    """IAT model ``<n/rho, h>`` of a Poisson flow of rate ``rho``.

    ``h`` is the pointwise maximum of the Erlang lower tails over gaps
    ``1..max_gap``.  Longer gaps are covered by ``P{S_k < k/rho}``, which
    decreases to 1/2 in ``k``; the bound therefore never falls below one half
    and carries no finite tail integral.
    """
    if rho <= 0:
        raise ModelError("rho must be positive")
    grid = grid or DEFAULT_BOUND_GRID
    xs = grid.points()
    vals = np.zeros_like(xs)
    for k in range(1, max_gap + 1):
        vals = np.maximum(vals, erlang_lower_tail(rho, k, xs))
    beyond = float(erlang_lower_tail(rho, max_gap + 1, 0.0))
    vals = np.maximum(vals, beyond)
    return TrafficModel("IAT", Curve.affine(1.0 / rho), BoundingFn.table(grid.step, vals),
                        params={"rho": rho})


def md1_vsd_arrival(mu: float, D: float, grid: Optional[GridSpec] = None) -> TrafficModel:
    """VSD model ``<D n, P{W > x}>`` of a Poisson(mu) flow, W the M/D/1 wait."""
    return TrafficModel("VSD", Curve.affine(D), md1_vsd_bound(mu, D, grid or DEFAULT_BOUND_GRID),
                        params={"mu": mu, "D": D})


def msd_arrival(curve: Curve, bound: BoundingFn) -> TrafficModel:
    return TrafficModel("MSD", curve, bound)


def vbc_arrival(alpha: Curve, bound: BoundingFn) -> TrafficModel:
    return TrafficModel("VBC", alpha, bound)


def constant_server(T: float) -> ServerModel:
    """Deterministic server with service time ``T``: ``gamma(k) = T (k + 1)``."""
    if T <= 0:
        raise ModelError("service time must be positive")
    return ServerModel("DET", Curve.affine(T, T), params={"T": T})


def wireless_slot_budget(Pe: float, slack: float = 0.1) -> float:
    """Slots per packet charged to the curve: ``(1 + slack) / (1 - Pe)``."""
    if not 0 <= Pe < 1:
        raise ModelError(f"Pe must lie in [0, 1), got {Pe}")
    if Pe == 0:
        return 1.0
    if slack <= 0:
        raise ModelError("slack must be positive when Pe > 0")
    return (1.0 + slack) / (1.0 - Pe)


def wireless_id_server(delta: float, Pe: float, slack: float = 0.1,
                       grid: Optional[GridSpec] = None) -> ServerModel:
    """ID model of a slotted link with independent per-slot loss ``Pe``.

    ``gamma(k) = delta + r delta (k + 1)`` with ``r`` slots budgeted per
    packet; the extra ``delta`` absorbs waiting for the next slot boundary.
    ``j`` bounds the excess of the realized slot counts over the budget.
    """
    if delta <= 0:
        raise ModelError("slot length must be positive")
    if Pe == 1:
        raise ModelError("Pe = 1: no packet is ever delivered")
    r = wireless_slot_budget(Pe, slack)
    curve = Curve.affine(r * delta, delta * (1 + r))
    j = wireless_service_bound(delta, Pe, r, grid or DEFAULT_BOUND_GRID)
    return ServerModel("ID", curve, j, params={"delta": delta, "Pe": Pe, "slots_per_packet": r})


# ---------------------------------------------------------------------------
# conversions
# ---------------------------------------------------------------------------

def _require(m, kind: str):
    if m.kind != kind:
        raise ModelError(f"expected a {kind} model, got {m.kind}")


def _inflate(bound: BoundingFn, eta: float, grid: GridSpec) -> BoundingFn:
    if not math.isfinite(tail_integral(bound, 0.0)):
        raise CertificateError("bounding function has no finite tail integral; "
                               "attach an exponential envelope to certify it")
    return eta_inflate(bound, eta, grid)


def vsd_to_iat(m: TrafficModel) -> TrafficModel:
    m = as_traffic_kind(m, "VSD")
    return TrafficModel("IAT", m.curve, m.bound, m.params)


def iat_to_vsd(m: TrafficModel, eta: float, grid: Optional[GridSpec] = None) -> TrafficModel:
    """``<lambda - eta n, h + (1/eta) int h>`` (curve floored into the monotone class)."""
    m = as_traffic_kind(m, "IAT")
    if eta <= 0:
        raise ModelError("eta must be positive")
    bound = _inflate(m.bound, eta, grid or DEFAULT_BOUND_GRID)
    return TrafficModel("VSD", m.curve.minus_linear_floored(eta), bound, {"eta": eta})


def cs_to_id(m: ServerModel) -> ServerModel:
    m = as_server_kind(m, "CS")
    return ServerModel("ID", m.curve, m.bound, m.params)


def id_to_cs(m: ServerModel, eta: float, grid: Optional[GridSpec] = None) -> ServerModel:
    """``<gamma + eta n, j + (1/eta) int j>``."""
    m = as_server_kind(m, "ID")
    if eta <= 0:
        raise ModelError("eta must be positive")
    bound = _inflate(m.bound, eta, grid or DEFAULT_BOUND_GRID)
    return ServerModel("CS", m.curve.plus_linear(eta), bound, dict(m.params, eta=eta))


def vbc_to_vsd(m: TrafficModel, grid: Optional[GridSpec] = None) -> TrafficModel:
    """``lambda = inf{t : alpha(t) >= n}`` and ``h(y) = f(sup_t [alpha(t+y) - alpha(t)] + 1)``."""
    _require(m, "VBC")
    grid = grid or DEFAULT_BOUND_GRID
    alpha = m.curve
    lam = lower_pseudo_inverse(alpha)
    if m.bound.is_deterministic:
        return TrafficModel("VSD", lam)
    h = compose(m.bound, lambda y: sup_growth_gap(alpha, y), grid,
                lower_rate=alpha.tail_slope, lower_offset=1.0)
    return TrafficModel("VSD", lam, h)


def vsd_to_vbc(m: TrafficModel, grid: Optional[GridSpec] = None) -> TrafficModel:
    """``alpha = sup{k : lambda(k) <= t}`` and ``f(x) = h(sup_k [lambda(k) - lambda(k-x+1)])``.

    The backlog statistic counts the packet that opens its window, so a
    window holding ``k + 1`` packets is charged against ``alpha(lambda(k)) = k``;
    ``f`` is therefore 1 below one packet.
    """
    m = as_traffic_kind(m, "VSD")
    grid = grid or DEFAULT_BOUND_GRID
    lam = m.curve
    alpha = upper_pseudo_inverse(lam)
    if m.bound.is_deterministic:
        return TrafficModel("VBC", alpha)
    f = compose(m.bound, lambda x: sup_forward_gap(lam, x - 1.0) if x >= 1.0 else -1.0, grid,
                lower_rate=lam.tail_slope, lower_offset=-lam.tail_slope)
    return TrafficModel("VBC", alpha, f)
