"""Bounding functions: wide-sense decreasing tail probabilities in [0, 1].

Three representations are supported:

* ``exp``        ``x -> min(1, a * exp(-b x))``
* ``table``      values on the lattice ``k * step``; between lattice points the
                 value at the left point is used (pessimistic for a decreasing
                 function), beyond the last point the last value is held.
* ``indicator``  1 for ``x < 0`` and 0 for ``x >= 0`` (deterministic models).

Every function equals 1 for negative arguments.  A table may carry an
exponential *envelope* ``(a, b)``: a certificate that ``f(x) <= a exp(-b x)``
holds for every ``x >= 0``.  The envelope gives tables a finite tail integral
(the F-class certificate) and is carried through convolution, composition and
the eta-conversions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np
from scipy import optimize, special, stats

from .curves import GridSpec

_FLOOR_EPS = 1e-9


class BoundError(ValueError):
    pass


class InstabilityError(BoundError):
    pass


def clamp_one(v):
    """``[v]_1 = min(1, v)`` for ``v >= 0``."""
    arr = np.asarray(v, dtype=float)
    if np.any(arr < 0):
        raise BoundError("clamp_one expects a nonnegative argument")
    out = np.minimum(arr, 1.0)
    return out.item() if np.ndim(v) == 0 else out


@dataclass(frozen=True, eq=False)
class BoundingFn:
    kind: str
    a: float = 1.0
    b: float = 1.0
    step: float = 0.0
    values: Optional[np.ndarray] = field(default=None, repr=False)
    envelope: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in ("exp", "table", "indicator"):
            raise BoundError(f"unknown bounding function kind {self.kind!r}")
        if self.kind == "exp" and (self.a < 0 or self.b < 0):
            raise BoundError("exponential bound needs a >= 0 and b >= 0")
        if self.kind == "table":
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim != 1 or len(vals) == 0 or self.step <= 0:
                raise BoundError("table bound needs a positive step and values")
            if np.any(vals < -1e-15) or np.any(vals > 1 + 1e-12):
                raise BoundError("table values must lie in [0, 1]")
            if np.any(np.diff(vals) > 1e-12):
                raise BoundError("table values must be wide-sense decreasing")
            object.__setattr__(self, "values", np.clip(vals, 0.0, 1.0))

    # ------------------------------------------------------------ constructors
    @classmethod
    def exponential(cls, a: float, b: float) -> "BoundingFn":
        return cls("exp", a=float(a), b=float(b))

    @classmethod
    def indicator(cls) -> "BoundingFn":
        return cls("indicator")

    @classmethod
    def table(cls, step: float, values, envelope=None) -> "BoundingFn":
        values = np.minimum.accumulate(np.clip(np.asarray(values, dtype=float), 0.0, 1.0))
        return cls("table", step=float(step), values=values,
                   envelope=None if envelope is None else (float(envelope[0]), float(envelope[1])))

    # ----------------------------------------------------------------- queries
    @property
    def is_deterministic(self) -> bool:
        if self.kind == "indicator":
            return True
        if self.kind == "exp":
            return self.a == 0
        return bool(np.all(self.values == 0))

    @property
    def horizon(self) -> float:
        if self.kind == "table":
            return (len(self.values) - 1) * self.step
        return 0.0

    @property
    def exp_envelope(self) -> Optional[tuple[float, float]]:
        """``(a, b)`` with ``f(x) <= a exp(-b x)`` for all ``x >= 0``, if known."""
        if self.kind == "indicator":
            return (0.0, math.inf)
        if self.kind == "exp":
            return (self.a, self.b)
        if self.is_deterministic:
            return (0.0, math.inf)
        return self.envelope

    @property
    def f_class(self) -> bool:
        return math.isfinite(tail_integral(self, 0.0))

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.ones_like(x)
        pos = x >= 0
        xp = x[pos]
        if self.kind == "indicator":
            out[pos] = 0.0
        elif self.kind == "exp":
            with np.errstate(over="ignore"):
                out[pos] = np.minimum(1.0, self.a * np.exp(-self.b * xp))
        else:
            k = np.floor(xp / self.step + _FLOOR_EPS).astype(np.int64)
            k = np.minimum(k, len(self.values) - 1)
            v = self.values[k]
            if self.envelope is not None:
                a, b = self.envelope
                with np.errstate(over="ignore", invalid="ignore"):
                    env = a * np.exp(-b * xp) if a > 0 else np.zeros_like(xp)
                v = np.minimum(v, env)
            out[pos] = v
        return out.item() if scalar else out

    def tabulate(self, grid: GridSpec) -> "BoundingFn":
        """Materialize on ``grid`` (extended to cover this function's own table)."""
        if self.kind == "table" and abs(self.step - grid.step) < 1e-15 \
                and self.horizon >= grid.horizon - 1e-12:
            return self
        g = grid.extended(max(grid.horizon, self.horizon))
        return BoundingFn.table(g.step, self(g.points()), self.exp_envelope
                                if self.kind != "indicator" else (0.0, math.inf))

    # --------------------------------------------------------------- json/csv
    def to_json(self) -> dict:
        if self.kind == "indicator":
            return {"kind": "indicator"}
        if self.kind == "exp":
            return {"kind": "exp", "params": {"a": self.a, "b": self.b}}
        env = None if self.envelope is None else [self.envelope[0],
                                                  _json_float(self.envelope[1])]
        return {"kind": "table", "table": {"step": self.step, "values": self.values.tolist(),
                                           "envelope": env}}

    @classmethod
    def from_json(cls, d: dict) -> "BoundingFn":
        kind = d["kind"]
        if kind == "indicator":
            return cls.indicator()
        if kind == "exp":
            p = d["params"]
            return cls.exponential(p["a"], p["b"])
        if kind == "table":
            t = d["table"]
            env = t.get("envelope")
            if env is not None:
                env = (float(env[0]), float(env[1]))
            return cls.table(t["step"], t["values"], env)
        raise BoundError(f"unknown bounding function kind {kind!r}")

    def csv_rows(self, grid: GridSpec):
        xs = grid.points()
        return list(zip(xs.tolist(), self(xs).tolist()))


def _json_float(v: float):
    return v if math.isfinite(v) else "inf"


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _capped_exp_integral(x: float, cap: float, a: float, b: float) -> float:
    """``int_x^inf min(cap, a exp(-b y)) dy``."""
    if a <= 0 or cap <= 0:
        return 0.0
    if b == 0:
        return math.inf
    if math.isinf(b):
        return 0.0
    y0 = (math.log(a) - math.log(cap)) / b if a > cap else -math.inf
    if x >= y0:
        return a / b * math.exp(-b * x)
    return cap * (y0 - x) + cap / b


def tail_integral(h: BoundingFn, x: float) -> float:
    """``int_x^inf h(y) dy``; ``math.inf`` when the tail does not decay."""
    if x < 0:
        raise BoundError("tail_integral expects x >= 0")
    if h.kind == "indicator":
        return 0.0
    if h.kind == "exp":
        return _capped_exp_integral(x, 1.0, h.a, h.b)
    if h.envelope is not None:
        # exact integral of the evaluated function min(table, envelope)
        return _table_env_integral(h, x)
    vals, step = h.values, h.step
    last = len(vals) - 1
    if vals[-1] > 0:
        return math.inf
    k0 = int(math.floor(x / step + _FLOOR_EPS))
    if k0 >= last:
        return 0.0
    part = ((k0 + 1) * step - x) * vals[k0]
    return float(part + step * vals[k0 + 1:last].sum())


def _table_env_integral(h: BoundingFn, x: float) -> float:
    a, b = h.envelope
    vals, step = h.values, h.step
    last = len(vals) - 1
    total = 0.0
    k0 = int(math.floor(x / step + _FLOOR_EPS))
    lo = x
    for k in range(min(k0, last), last):
        hi = (k + 1) * step
        total += _capped_exp_integral(lo, vals[k], a, b) - _capped_exp_integral(hi, vals[k], a, b)
        lo = hi
    total += _capped_exp_integral(max(lo, last * step, x), vals[last], a, b)
    return float(total)


def tail_integral_grid(h: BoundingFn, grid: GridSpec) -> np.ndarray:
    return np.array([tail_integral(h, x) for x in grid.points()])


# ---------------------------------------------------------------------------
# min-plus convolution of CCDFs
# ---------------------------------------------------------------------------

def _conv_envelope(e1, e2):
    if e1 is None or e2 is None:
        return None
    (a1, b1), (a2, b2) = e1, e2
    if a1 == 0:
        return e2
    if a2 == 0:
        return e1
    if b1 == 0 or b2 == 0:
        return None
    # split y = x * b2 / (b1 + b2) balances the two exponents
    return (a1 + a2, b1 * b2 / (b1 + b2))


def ccdf_min_plus_conv(fs: Sequence[BoundingFn], grid: GridSpec) -> BoundingFn:
    """``[f_1 (x) ... (x) f_N]_1`` on the grid.

    Each split of ``x`` into lattice points gives a valid union bound, so the
    lattice minimum upper-bounds the continuous infimum.
    """
    fs = list(fs)
    if not fs:
        raise BoundError("ccdf_min_plus_conv needs at least one function")
    xs = grid.points()
    acc = fs[0](xs)
    env = fs[0].exp_envelope
    for f in fs[1:]:
        if f.is_deterministic:
            continue
        if np.all(acc == 0):
            acc, env = f(xs), f.exp_envelope
            continue
        fv = f(xs)
        out = np.empty_like(acc)
        for k in range(len(xs)):
            out[k] = np.min(acc[: k + 1] + fv[k::-1])
        acc = np.minimum(out, 1.0)
        env = _conv_envelope(env, f.exp_envelope)
    if env is not None and env[0] == 0:
        env = (0.0, math.inf)
    return BoundingFn.table(grid.step, acc, env)


def compose(f: BoundingFn, g: Callable[[float], float], grid: GridSpec,
            lower_rate: float = 0.0, lower_offset: float = 0.0) -> BoundingFn:
    """``y -> f(g(y))`` for an increasing ``g`` with ``g(y) >= rate*y + offset``
    wherever ``g(y) >= 0``.

    An exponential envelope of ``f`` becomes one of the composition through
    the affine lower bound of ``g``.  Where ``g`` is negative the value is 1,
    which the envelope covers once its prefactor is at least 1.
    """
    xs = grid.points()
    vals = np.array([f(g(float(y))) if math.isfinite(g(float(y))) else 0.0 for y in xs])
    env = f.exp_envelope
    if env is not None and env[0] > 0:
        a, b = env
        if lower_offset < 0:
            a = max(a, 1.0)
        env = (a * math.exp(-b * lower_offset), b * lower_rate) if lower_rate > 0 else None
    return BoundingFn.table(grid.step, vals, env)


def eta_inflate(h: BoundingFn, eta: float, grid: GridSpec) -> BoundingFn:
    """``[h(x) + (1/eta) int_x^inf h(y) dy]_1`` on the grid."""
    if eta <= 0:
        raise BoundError("eta must be positive")
    if h.is_deterministic:
        return BoundingFn.indicator()
    g = grid.extended(max(grid.horizon, h.horizon))
    xs = g.points()
    integ = np.array([tail_integral(h, x) for x in xs])
    if not np.all(np.isfinite(integ)):
        raise BoundError("bounding function has an infinite tail integral")
    vals = np.minimum(1.0, h(xs) + integ / eta)
    env = h.exp_envelope
    if env is not None and env[0] > 0:
        a, b = env
        env = (a * (1 + 1 / (eta * b)), b) if b > 0 else None
    return BoundingFn.table(g.step, vals, env)


# ---------------------------------------------------------------------------
# concrete bounds from the traffic / service examples
# ---------------------------------------------------------------------------

def erlang_lower_tail(rho: float, k: int, x) -> np.ndarray:
    """``P{k/rho - S_k > x}`` with ``S_k ~ Erlang(k, rho)``."""
    x = np.asarray(x, dtype=float)
    y = k / rho - x
    out = np.where(y > 0, stats.gamma.cdf(np.maximum(y, 0.0), a=k, scale=1.0 / rho), 0.0)
    return np.where(x < 0, 1.0, out)


def erlang_iat_bound(rho: float, n_minus_m: int, grid: Optional[GridSpec] = None) -> BoundingFn:
    """Bound on ``P{(n-m)/rho - [a(n) - a(m)] > x}`` for Poisson(rho) arrivals."""
    if rho <= 0:
        raise BoundError("rho must be positive")
    if n_minus_m < 1:
        raise BoundError("n - m must be at least 1")
    if grid is None:
        grid = GridSpec(0.01, math.ceil(n_minus_m / rho / 0.01 + 1) * 0.01)
    xs = grid.points()
    return BoundingFn.table(grid.step, erlang_lower_tail(rho, n_minus_m, xs))


KINGMAN_CUTOFF = 1e-15


def md1_wait_ccdf(mu: float, D: float, x: float) -> float:
    """Stationary M/D/1 waiting-time CCDF ``P{W > x}`` (service D, Poisson rate mu).

    Where Kingman's bound is below ``KINGMAN_CUTOFF`` that bound is returned
    instead. Erlang's series has alternating terms of size ``exp(mu x)``; it is summed in
    multiprecision to keep the cancellation harmless.
    """
    rho = mu * D
    if rho >= 1:
        raise InstabilityError(f"M/D/1 needs mu*D < 1, got {rho}")
    if x < 0:
        return 1.0
    far = math.exp(-_kingman_rate_cached(mu, D) * x)
    if far < KINGMAN_CUTOFF:
        return far  # the series is long here and its value is below the cutoff anyway
    kmax = int(math.floor(x / D + 1e-12))
    dps = 30 + int(mu * x / 2.0) + kmax // 4
    with mpmath.workdps(dps):
        mx, mmu, mD = mpmath.mpf(x), mpmath.mpf(mu), mpmath.mpf(D)
        s = mpmath.mpf(0)
        for k in range(kmax + 1):
            u = mmu * (mx - k * mD)
            s += mpmath.exp(u) * (-u) ** k / mpmath.factorial(k)
        cdf = (1 - mmu * mD) * s
        return float(min(max(1 - cdf, 0), 1))


def md1_kingman_rate(mu: float, D: float) -> float:
    """Positive root of ``exp(theta D) * mu / (mu + theta) = 1``."""
    rho = mu * D
    if rho >= 1:
        raise InstabilityError(f"M/D/1 needs mu*D < 1, got {rho}")
    fn = lambda t: t * D - math.log1p(t / mu)
    hi = 1.0
    while fn(hi) <= 0:
        hi *= 2
    return optimize.brentq(fn, 1e-12 * mu + (1 - rho) * 1e-9, hi, xtol=1e-14)


@lru_cache(maxsize=None)
def _kingman_rate_cached(mu: float, D: float) -> float:
    return md1_kingman_rate(mu, D)


@lru_cache(maxsize=64)
def _md1_table(mu: float, D: float, step: float, size: int) -> tuple:
    return tuple(md1_wait_ccdf(mu, D, k * step) for k in range(size))


def md1_vsd_bound(mu: float, D: float, grid: Optional[GridSpec] = None) -> BoundingFn:
    """M/D/1 waiting-time CCDF as a bounding function, with Kingman's envelope."""
    if mu <= 0 or D <= 0:
        raise BoundError("mu and D must be positive")
    if mu * D >= 1:
        raise InstabilityError(f"M/D/1 needs mu*D < 1, got {mu * D}")
    if grid is None:
        grid = GridSpec(0.05, 40.0)
    vals = _md1_table(float(mu), float(D), float(grid.step), grid.size)
    theta = md1_kingman_rate(mu, D)
    return BoundingFn.table(grid.step, vals, (1.0, theta))


def negbin_pmf(Pe: float, n: int, i) -> np.ndarray:
    """``P{Delta(1) + ... + Delta(n) = i}`` for geometric slot counts."""
    _check_pe(Pe)
    i = np.asarray(i)
    ok = i >= n
    ii = np.where(ok, i, n).astype(float)
    if Pe == 0:
        out = np.where(ii == n, 1.0, 0.0)
    else:
        logp = (special.gammaln(ii) - special.gammaln(n) - special.gammaln(ii - n + 1)
                + n * math.log1p(-Pe) + (ii - n) * math.log(Pe))
        out = np.exp(logp)
    return np.where(ok, out, 0.0)


def negbin_service_tail(Pe: float, n: int, slots) -> np.ndarray:
    """``P{Delta(1) + ... + Delta(n) > slots}``."""
    _check_pe(Pe)
    if n < 1:
        raise BoundError("n must be at least 1")
    s = np.floor(np.asarray(slots, dtype=float))
    failures = s - n
    out = np.where(failures < 0, 1.0, stats.nbinom.sf(np.maximum(failures, 0), n, 1.0 - Pe))
    return out.item() if np.ndim(slots) == 0 else out


def _check_pe(Pe: float):
    if Pe == 1:
        raise BoundError("Pe = 1: no packet is ever delivered")
    if not 0 <= Pe < 1:
        raise BoundError(f"Pe must lie in [0, 1), got {Pe}")


def geometric_walk_rate(Pe: float, r: float, delta: float) -> float:
    """Kingman exponent for the walk with steps ``delta * (Delta - r)``.

    Positive root of ``E exp(theta * delta * (Delta - r)) = 1``; requires the
    drift ``1/(1-Pe) - r`` to be negative.
    """
    if Pe == 0:
        return math.inf
    if 1 / (1 - Pe) >= r:
        raise InstabilityError("slot budget r must exceed the mean 1/(1-Pe)")
    # substitute w = -log(1 - Pe e^u), u = theta delta: the equation becomes
    # convex in w, zero at u = 0, minimal at w = ln r, so [ln r, inf) brackets
    # the positive root even when Pe is tiny and the root hugs the pole
    log_pe = math.log(Pe)

    def fn(w):
        return math.log1p(-Pe) + (1 - r) * (math.log(-math.expm1(-w)) - log_pe) + w

    lo = math.log(r)
    hi = 2 * lo + 1.0
    while fn(hi) <= 0:
        hi *= 2
    w = optimize.brentq(fn, lo, hi, xtol=1e-14, rtol=1e-13)
    return (math.log(-math.expm1(-w)) - log_pe) / delta


def wireless_service_bound(delta: float, Pe: float, r: float,
                           grid: Optional[GridSpec] = None) -> BoundingFn:
    """Bound on ``max_j delta * (S_j - r j)``, ``S_j`` a sum of ``j`` geometric slot counts.

    Pointwise minimum of the union bound over ``j`` (negative-binomial tails)
    and Kingman's exponential bound.
    """
    _check_pe(Pe)
    if grid is None:
        grid = GridSpec(0.05, 40.0)
    xs = grid.points()
    if Pe == 0:
        if r < 1:
            raise InstabilityError("slot budget r must be at least 1")
        return BoundingFn.indicator()
    theta = geometric_walk_rate(Pe, r, delta)
    union = np.zeros_like(xs)
    j = 1
    while True:
        thresh = np.floor(r * j + xs / delta + 1e-12)
        term = negbin_service_tail(Pe, j, thresh)
        union += term
        if j > 5 and term.max() < 1e-17:
            break
        if j > 100000:
            break
        j += 1
    king = np.exp(-theta * xs)
    vals = np.minimum(np.minimum(union, king), 1.0)
    return BoundingFn.table(grid.step, vals, (1.0, theta))
