"""Piecewise-linear monotone curves and the max-plus / min-plus operations.

A :class:`Curve` is a finite list of breakpoints ``(x, value)`` followed by an
affine tail.  Jumps are stored as two breakpoints sharing the same ``x``; the
``right_continuous`` flag decides which of the two values the curve takes *at*
the jump.  Space-domain curves (``alpha``) are right-continuous, their lower
pseudo-inverses (``lambda``) come out left-continuous.

Grid-based operations work on the lattice ``0, step, 2*step, ...``.  For
time-domain curves the argument is a packet index, so the default step of one
packet makes the lattice the exact domain of the operation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

#: Marker for a supremum / infimum that diverges.
UNBOUNDED = math.inf

_EPS = 1e-12


class CurveError(ValueError):
    pass


class DivergentDeconvolution(UserWarning):
    """A max-plus deconvolution whose infimum is minus infinity was clamped to 0."""


@dataclass(frozen=True)
class GridSpec:
    step: float = 1.0
    horizon: float = 64.0

    def __post_init__(self):
        if not self.step > 0:
            raise CurveError(f"grid step must be positive, got {self.step}")
        if not self.horizon > 0:
            raise CurveError(f"grid horizon must be positive, got {self.horizon}")
        ratio = self.horizon / self.step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise CurveError("grid horizon must be an integer multiple of step")

    @property
    def size(self) -> int:
        return int(round(self.horizon / self.step)) + 1

    def points(self) -> np.ndarray:
        return np.arange(self.size) * self.step

    def extended(self, horizon: float) -> "GridSpec":
        n = math.ceil(horizon / self.step - 1e-9)
        return GridSpec(self.step, max(n, 1) * self.step)


class Curve:
    """Nonnegative wide-sense increasing piecewise-linear curve with affine tail.

    ``tail_slope`` may be ``math.inf``: the curve is then unbounded beyond its
    last breakpoint (this is what a pseudo-inverse of a curve with a flat tail
    looks like).
    """

    __slots__ = ("xs", "vs", "tail_slope", "right_continuous")

    def __init__(self, breakpoints: Iterable[Sequence[float]], tail_slope: float = 0.0,
                 right_continuous: bool = True, check: bool = True):
        pts = [(float(x), float(v)) for x, v in breakpoints]
        if not pts:
            raise CurveError("a curve needs at least one breakpoint")
        xs = np.array([p[0] for p in pts])
        vs = np.array([p[1] for p in pts])
        xs, vs = _squash_duplicates(xs, vs)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "vs", vs)
        object.__setattr__(self, "tail_slope", float(tail_slope))
        object.__setattr__(self, "right_continuous", bool(right_continuous))
        if check:
            self._check()

    def __setattr__(self, name, value):
        raise AttributeError("Curve is immutable")

    def _check(self):
        xs, vs = self.xs, self.vs
        if xs[0] != 0.0:
            raise CurveError("first breakpoint must be at x = 0")
        if np.any(np.diff(xs) < 0):
            raise CurveError("breakpoints must be ordered in x")
        if np.any(vs < -_EPS) or not np.all(np.isfinite(vs)):
            raise CurveError("curve values must be finite and nonnegative")
        if np.any(np.diff(vs) < -1e-9 * (1 + np.abs(vs[:-1]))):
            raise CurveError("curve values must be wide-sense increasing")
        if self.tail_slope < 0 or math.isnan(self.tail_slope):
            raise CurveError("tail slope must be nonnegative")

    # ------------------------------------------------------------------ basics
    @classmethod
    def affine(cls, rate: float, burst: float = 0.0) -> "Curve":
        return cls([(0.0, burst)], rate)

    @classmethod
    def rate_latency(cls, rate: float, latency: float) -> "Curve":
        """``rate * (x - latency)+``."""
        if latency <= 0:
            return cls([(0.0, 0.0)], rate)
        return cls([(0.0, 0.0), (latency, 0.0)], rate)

    @classmethod
    def from_samples(cls, xs, vs, tail_slope: float) -> "Curve":
        return cls(zip(xs, vs), tail_slope)

    @property
    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.xs.tolist(), self.vs.tolist()))

    @property
    def last_x(self) -> float:
        return float(self.xs[-1])

    @property
    def is_affine(self) -> bool:
        return len(self.xs) == 1

    def __repr__(self):
        kind = "" if self.right_continuous else ", left-continuous"
        return f"Curve({self.breakpoints}, tail_slope={self.tail_slope}{kind})"

    def __eq__(self, other):
        if not isinstance(other, Curve):
            return NotImplemented
        return (np.array_equal(self.xs, other.xs) and np.array_equal(self.vs, other.vs)
                and self.tail_slope == other.tail_slope
                and self.right_continuous == other.right_continuous)

    def __hash__(self):
        return hash((self.xs.tobytes(), self.vs.tobytes(), self.tail_slope))

    def to_json(self) -> dict:
        d = {"breakpoints": [[x, v] for x, v in self.breakpoints],
             "tail_slope": self.tail_slope if math.isfinite(self.tail_slope) else "inf"}
        if not self.right_continuous:
            d["right_continuous"] = False
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Curve":
        slope = d.get("tail_slope", 0.0)
        slope = math.inf if slope in ("inf", "Infinity") else float(slope)
        return cls(d["breakpoints"], slope, d.get("right_continuous", True))

    # -------------------------------------------------------------- evaluation
    def __call__(self, x):
        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise CurveError("curves are defined on x >= 0 only")
        out = self._eval(x, "right" if self.right_continuous else "left")
        return out.item() if scalar else out

    def right_limit(self, x):
        return self._eval(np.asarray(x, dtype=float), "right")

    def left_limit(self, x):
        """Left limit; at x = 0 the value at 0 is returned."""
        x = np.asarray(x, dtype=float)
        return np.where(x <= 0, self._eval(x, "right" if self.right_continuous else "left"),
                        self._eval(x, "left"))

    def _eval(self, x: np.ndarray, side: str) -> np.ndarray:
        xs, vs = self.xs, self.vs
        n = len(xs)
        x = np.atleast_1d(x).astype(float)
        out = np.empty_like(x)
        if side == "right":
            i = np.searchsorted(xs, x, side="right") - 1
            exact = np.zeros_like(x, dtype=bool)
        else:
            j = np.searchsorted(xs, x, side="left")
            exact = (j < n) & (xs[np.minimum(j, n - 1)] == x)
            i = j - 1
        i = np.maximum(i, 0)
        if side == "left":
            out[exact] = vs[np.minimum(j, n - 1)[exact]]
        tail = ~exact & (i >= n - 1)
        dx = x[tail] - xs[-1]
        with np.errstate(invalid="ignore"):
            tv = vs[-1] + self.tail_slope * dx
        if math.isinf(self.tail_slope):
            tv = np.where(dx > 0, math.inf, vs[-1])
        out[tail] = tv
        mid = ~exact & ~tail
        im = i[mid]
        x0, x1 = xs[im], xs[im + 1]
        v0, v1 = vs[im], vs[im + 1]
        w = (x[mid] - x0) / np.where(x1 > x0, x1 - x0, 1.0)
        out[mid] = v0 + w * (v1 - v0)
        return out

    # -------------------------------------------------------- pointwise algebra
    def __add__(self, other: "Curve") -> "Curve":
        return _combine(self, other, np.add)

    def maximum(self, other: "Curve") -> "Curve":
        return _combine(self, other, np.maximum)

    def minimum(self, other: "Curve") -> "Curve":
        return _combine(self, other, np.minimum)

    def shifted(self, dv: float) -> "Curve":
        """Add a constant (result must stay nonnegative)."""
        return Curve(zip(self.xs, self.vs + dv), self.tail_slope, self.right_continuous)

    def plus_linear(self, slope: float) -> "Curve":
        """``c(x) + slope * x`` for ``slope >= 0``."""
        return Curve(zip(self.xs, self.vs + slope * self.xs), self.tail_slope + slope,
                     self.right_continuous)

    def minus_linear_floored(self, slope: float) -> "Curve":
        """Largest curve in G below ``max(c(x) - slope * x, 0)``.

        Lowering a time-domain arrival curve keeps it a valid (weaker) arrival
        curve, so the monotone minorant is the sound way back into G.
        """
        if slope < 0:
            raise CurveError("slope must be nonnegative")
        xs = self.xs
        vs = self.vs - slope * xs
        tail = self.tail_slope - slope
        if tail < 0:
            return Curve([(0.0, 0.0)], 0.0, self.right_continuous)
        pts = _monotone_minorant(xs, vs)
        pts = _floor_zero(pts)
        return Curve(pts, tail, self.right_continuous)

    def sample(self, grid: GridSpec) -> np.ndarray:
        return self(grid.points())


def _squash_duplicates(xs, vs):
    """Keep at most two breakpoints per x (the outer values of a jump)."""
    keep = np.ones(len(xs), dtype=bool)
    for k in range(1, len(xs) - 1):
        if xs[k - 1] == xs[k] == xs[k + 1]:
            keep[k] = False
    xs, vs = xs[keep], vs[keep]
    # drop zero-height jumps
    keep = np.ones(len(xs), dtype=bool)
    for k in range(1, len(xs)):
        if xs[k] == xs[k - 1] and vs[k] == vs[k - 1]:
            keep[k] = False
    return xs[keep], vs[keep]


def _monotone_minorant(xs, vs):
    """Exact ``inf_{k >= x} c(k)`` of a PWL function whose tail is increasing."""
    out = [(xs[-1], vs[-1])]
    m = vs[-1]
    for k in range(len(xs) - 2, -1, -1):
        x0, v0, x1, v1 = xs[k], vs[k], xs[k + 1], vs[k + 1]
        if x0 == x1:
            out.append((x0, min(v0, m)))
            m = min(m, v0)
            continue
        if v0 < m and v1 > m:
            xc = x0 + (m - v0) * (x1 - x0) / (v1 - v0)
            out.append((xc, m))
        elif v0 > m and v1 < m:
            xc = x0 + (m - v0) * (x1 - x0) / (v1 - v0)
            out.append((xc, m))
        out.append((x0, min(v0, m)))
        m = min(m, v0)
    out.reverse()
    return out


def _floor_zero(pts):
    res = [pts[0]]
    for (x0, v0), (x1, v1) in zip(pts, pts[1:]):
        if (v0 < 0 < v1) and x1 > x0:
            res.append((x0 + (-v0) * (x1 - x0) / (v1 - v0), 0.0))
        res.append((x1, v1))
    return [(x, max(v, 0.0)) for x, v in res]


def _combine(a: Curve, b: Curve, op) -> Curve:
    if a.right_continuous != b.right_continuous:
        raise CurveError("cannot combine curves with different continuity conventions")
    xs = np.unique(np.concatenate([a.xs, b.xs]))
    crossing = op is not np.add
    if crossing:
        extra = []
        for x0, x1 in zip(xs, xs[1:]):
            d0 = a.right_limit(x0) - b.right_limit(x0)
            d1 = a.left_limit(x1) - b.left_limit(x1)
            if d0 * d1 < 0:
                extra.append(float(x0 + d0 / (d0 - d1) * (x1 - x0)))
        xl = xs[-1]
        d0 = float(a.right_limit(xl) - b.right_limit(xl))
        ds = a.tail_slope - b.tail_slope
        if ds != 0 and math.isfinite(ds) and d0 * ds < 0:
            extra.append(float(xl - d0 / ds))
        xs = np.unique(np.concatenate([xs, extra]))
    pts = []
    for x in xs:
        lv = np.ravel(op(a.left_limit(x), b.left_limit(x)))[0].item()
        rv = np.ravel(op(a.right_limit(x), b.right_limit(x)))[0].item()
        if x > 0 and lv != rv:
            pts.append((x, lv))
        pts.append((x, rv))
    if op is np.add:
        slope = a.tail_slope + b.tail_slope
    else:
        xl = xs[-1]
        va, vb = float(a.right_limit(xl)), float(b.right_limit(xl))
        pick_a = (a.tail_slope, va) >= (b.tail_slope, vb)
        if op is np.minimum:
            pick_a = (a.tail_slope, va) <= (b.tail_slope, vb)
        slope = a.tail_slope if pick_a else b.tail_slope
    return Curve(pts, slope, a.right_continuous)


# ---------------------------------------------------------------------------
# pseudo-inverses
# ---------------------------------------------------------------------------

def _swap(c: Curve, right_continuous: bool) -> Curve:
    pts = [(v, x) for x, v in c.breakpoints]
    if pts[0][0] > 0:
        pts.insert(0, (0.0, 0.0))
    if math.isinf(c.tail_slope):
        slope = 0.0
    elif c.tail_slope == 0:
        slope = math.inf
    else:
        slope = 1.0 / c.tail_slope
    return Curve(pts, slope, right_continuous)


def lower_pseudo_inverse(alpha: Curve) -> Curve:
    """``lambda(n) = inf{t : alpha(t) >= n}`` (exact, left-continuous result).

    If ``alpha`` has a flat tail the result is unbounded (tail slope ``inf``)
    beyond ``sup alpha``.
    """
    if not alpha.right_continuous:
        raise CurveError("lower pseudo-inverse expects a right-continuous curve")
    return _swap(alpha, right_continuous=False)


def upper_pseudo_inverse(lam: Curve) -> Curve:
    """``alpha(t) = sup{k : lambda(k) <= t}`` (exact, right-continuous result).

    For ``t < lambda(0)`` the set is empty and the result is taken as 0.
    """
    if lam.right_continuous and len(lam.xs) > 1 and np.any(np.diff(lam.xs) == 0):
        raise CurveError("upper pseudo-inverse expects a left-continuous curve at jumps")
    return _swap(lam, right_continuous=True)


# ---------------------------------------------------------------------------
# max-plus / min-plus operations on a grid
# ---------------------------------------------------------------------------

def _grid_curve(values: np.ndarray, grid: GridSpec, slope: float) -> Curve:
    xs = grid.points()
    return Curve(zip(xs, values), slope, check=True)


def _split_table(v1: np.ndarray, v2: np.ndarray, reduce: Callable) -> np.ndarray:
    n = len(v1)
    out = np.empty(n)
    for k in range(n):
        out[k] = reduce(v1[: k + 1] + v2[k::-1])
    return out


def _default_grid(*curves: Curve) -> GridSpec:
    far = max(max(c.last_x for c in curves), 1.0)
    return GridSpec(1.0, float(math.ceil(4 * far)))


def max_plus_conv(g1: Curve, g2: Curve, grid: GridSpec | None = None) -> Curve:
    """``sup_{0<=y<=x} g1(y) + g2(x-y)``."""
    if g1.is_affine and g2.is_affine:
        return Curve([(0.0, g1.vs[0] + g2.vs[0])], max(g1.tail_slope, g2.tail_slope))
    grid = grid or _default_grid(g1, g2)
    vals = _split_table(g1.sample(grid), g2.sample(grid), np.max)
    return _grid_curve(vals, grid, max(g1.tail_slope, g2.tail_slope))


def min_plus_conv(g1: Curve, g2: Curve, grid: GridSpec | None = None) -> Curve:
    """``inf_{0<=y<=x} g1(y) + g2(x-y)``."""
    if g1.is_affine and g2.is_affine:
        return Curve([(0.0, g1.vs[0] + g2.vs[0])], min(g1.tail_slope, g2.tail_slope))
    grid = grid or _default_grid(g1, g2)
    vals = _split_table(g1.sample(grid), g2.sample(grid), np.min)
    return _grid_curve(vals, grid, min(g1.tail_slope, g2.tail_slope))


def _deconv_offsets(g1: Curve, g2: Curve, grid: GridSpec) -> np.ndarray:
    # beyond max(last breakpoints) both curves are affine in y, so the
    # extremum over y >= 0 is reached on the finite lattice below it
    reach = max(grid.horizon, g1.last_x, g2.last_x)
    m = int(math.ceil(reach / grid.step - 1e-9))
    return np.arange(m + 1) * grid.step


def max_plus_deconv(g1: Curve, g2: Curve, grid: GridSpec | None = None) -> Curve:
    """``inf_{y>=0} g1(x+y) - g2(y)``, floored at 0.

    If ``slope(g1) < slope(g2)`` the infimum is minus infinity; the result is
    then clamped to 0 and a :class:`DivergentDeconvolution` warning is issued.
    """
    if g1.tail_slope < g2.tail_slope:
        warnings.warn("max-plus deconvolution diverges (tail slope of g1 < g2); "
                      "clamped to 0", DivergentDeconvolution, stacklevel=2)
        return Curve([(0.0, 0.0)], 0.0)
    if g1.is_affine and g2.is_affine:
        c, s = g1.vs[0] - g2.vs[0], g1.tail_slope
        if c >= 0:
            return Curve([(0.0, c)], s)
        if s == 0:
            return Curve([(0.0, 0.0)], 0.0)
        return Curve([(0.0, 0.0), (-c / s, 0.0)], s)
    grid = grid or _default_grid(g1, g2)
    ys = _deconv_offsets(g1, g2, grid)
    g2y = g2(ys)
    xs = grid.points()
    vals = np.array([np.min(g1(x + ys) - g2y) for x in xs])
    return _grid_curve(np.maximum(vals, 0.0), grid, g1.tail_slope)


def min_plus_deconv_at(g1: Curve, g2: Curve, x: float, grid: GridSpec | None = None) -> float:
    """``sup_{y>=0} g1(x+y) - g2(y)``; ``UNBOUNDED`` if the slopes diverge.

    The raw value is returned (it may be negative).
    """
    if g1.tail_slope > g2.tail_slope:
        return UNBOUNDED
    grid = grid or _default_grid(g1, g2)
    ys = _deconv_offsets(g1, g2, grid)
    return float(np.max(g1(x + ys) - g2(ys)))


def min_plus_deconv(g1: Curve, g2: Curve, grid: GridSpec | None = None):
    """``sup_{y>=0} g1(x+y) - g2(y)`` on the grid, floored at 0.

    Returns ``UNBOUNDED`` when ``slope(g1) > slope(g2)`` (unstable pairing).
    """
    if g1.tail_slope > g2.tail_slope:
        return UNBOUNDED
    grid = grid or _default_grid(g1, g2)
    ys = _deconv_offsets(g1, g2, grid)
    g2y = g2(ys)
    vals = np.array([np.max(g1(x + ys) - g2y) for x in grid.points()])
    return _grid_curve(np.maximum(vals, 0.0), grid, g1.tail_slope)


# ---------------------------------------------------------------------------
# gap suprema and horizontal deviation
# ---------------------------------------------------------------------------

def _sup_shift_difference(c: Curve, shift: float, u_min: float) -> float:
    """``sup_{u >= u_min} c(u + shift) - c(u)`` with ``c = 0`` on negative args.

    Exact for PWL curves: the supremum of a difference of two PWL functions is
    a value or a one-sided limit at a breakpoint of either, or the tail limit.
    """
    if shift == 0:
        return 0.0
    if math.isinf(c.tail_slope):
        return UNBOUNDED
    bps = np.concatenate([[0.0], c.xs])
    cand = np.unique(np.concatenate([bps, bps - shift, [u_min]]))
    cand = cand[cand >= u_min]

    def ext(fn, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < 0, 0.0, fn(np.maximum(u, 0.0)))

    def left(u):
        u = np.asarray(u, dtype=float)
        # left limit at 0 of the zero-extended curve is 0
        return np.where(u <= 0, 0.0, c.left_limit(np.maximum(u, 0.0)))

    at = ext(c, cand + shift) - ext(c, cand)
    right = ext(c.right_limit, cand + shift) - ext(c.right_limit, cand)
    lft = left(cand + shift) - left(cand)
    lft = np.where(cand > u_min, lft, -np.inf)
    best = float(max(at.max(), right.max(), lft.max()))
    return max(best, c.tail_slope * shift)


def sup_forward_gap(lam: Curve, x: float) -> float:
    """``sup_{k>=0} lambda(k) - lambda(k - x)`` with ``lambda = 0`` for negative args."""
    if x < 0:
        raise CurveError("x must be nonnegative")
    return _sup_shift_difference(lam, x, -x)


def sup_growth_gap(alpha: Curve, y: float) -> float:
    """``sup_{t>=0} alpha(t + y) - alpha(t) + 1``."""
    if y < 0:
        raise CurveError("y must be nonnegative")
    return _sup_shift_difference(alpha, y, 0.0) + 1.0


def horizontal_deviation(lam: Curve, gamma: Curve, x: float,
                         grid: GridSpec | None = None) -> float:
    """``sup_n inf{k >= 0 : gamma(n-k) + x <= lambda(n)}`` over packet indices.

    ``k`` ranges over ``0..n``; when no such ``k`` exists the count ``n`` is
    used, since at most ``n`` packets can be queued behind the sentinel packet
    0 that departs at time 0.
    """
    if gamma.tail_slope > lam.tail_slope:
        return UNBOUNDED
    grid = grid or _default_grid(lam, gamma)
    step = grid.step
    far = max(grid.horizon, lam.last_x, gamma.last_x)
    n_max = int(math.ceil(far / step))
    if lam.tail_slope > 0:
        # in the tail the required k settles once gamma(n-k) is affine too
        lam_far = lam(far)
        k_tail = (gamma(far) + x - lam_far) / (lam.tail_slope) + 1
        n_max += int(math.ceil(max(k_tail, 0) / step)) + 1
    ns = np.arange(n_max + 1) * step
    gv = gamma(ns)
    lv = lam(ns)
    m = np.searchsorted(gv, lv - x + 1e-12, side="right") - 1
    idx = np.arange(n_max + 1)
    m = np.minimum(m, idx)
    k = np.where(m < 0, idx, idx - m)
    return float(np.max(k) * step)
