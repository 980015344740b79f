"""The twelve acceptance criteria, each at its stated scale and tolerance.

Every test records one PASS/FAIL line (printed, and repeated in the pytest
terminal summary).  Run ``python3 tests/test_acceptance.py`` for just these.
"""
import json
import math
import time
import warnings
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from conftest import random_pwl, random_staircase, record_acceptance
from oracles import brute_conv, brute_deconv, deconv_reach, lemma_one_violations
from tdsnc.analysis import delay_bound, end_to_end_delay
from tdsnc.bounding import negbin_service_tail
from tdsnc.curves import (Curve, GridSpec, horizontal_deviation, lower_pseudo_inverse,
                          max_plus_conv, max_plus_deconv, min_plus_conv, min_plus_deconv,
                          min_plus_deconv_at, sup_forward_gap, upper_pseudo_inverse)
from tdsnc.models import (cs_to_id, iat_to_vsd, id_to_cs,
                          md1_vsd_arrival, vbc_to_vsd, vsd_to_iat, vsd_to_vbc,
                          wireless_id_server)
from tdsnc.runner import run
from tdsnc.scenario import load_scenario, loads
from tdsnc.simulator import (EmpiricalCCDF, ServerSpec, SourceSpec, backlog_at_arrivals,
                             check_dominance, cs_statistic, generate_arrivals, iat_tail,
                             id_statistic, serve_fifo, vbc_statistic,
                             vsd_statistic)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@lru_cache(maxsize=None)
def verified(name: str, analysis: tuple = ()):
    sc = load_scenario(SCENARIOS / name)
    if analysis:
        raw = sc.to_json()
        raw["analysis"] = list(analysis)
        sc = loads(json.dumps(raw))
    start = time.perf_counter()
    report = run(sc, "verify")
    return sc, report, time.perf_counter() - start


def verdict_of(report, prop, target=None):
    for p in report.properties:
        if p.prop == prop and (target is None or p.target == target):
            return p
    raise KeyError((prop, target))


def describe(p) -> str:
    v = p.verdict
    worst = max(v["violations"], key=lambda e: e["empirical"] - e["bound"], default=None)
    extra = f", worst x={worst['x']:g} emp={worst['empirical']:.4g} bound={worst['bound']:.4g}" \
        if worst else ""
    return f"{v['checked_points']} points checked, {len(v['violations'])} violations{extra}"


# --------------------------------------------------------------------------- 1

def test_criterion_01_algebra_matches_brute_force():
    grid = GridSpec(1.0, 64.0)
    rng = np.random.default_rng(2024)
    mismatches, elapsed = 0, 0.0
    for _ in range(200):
        g1, g2 = random_pwl(rng), random_pwl(rng)
        hi, lo = (g1, g2) if g1.tail_slope >= g2.tail_slope else (g2, g1)
        reach = deconv_reach(hi, lo, grid)
        start = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            got = [max_plus_conv(g1, g2, grid).sample(grid), min_plus_conv(g1, g2, grid).sample(grid),
                   max_plus_deconv(hi, lo, grid).sample(grid),
                   min_plus_deconv(lo, hi, grid).sample(grid)]
        elapsed += time.perf_counter() - start
        want = [brute_conv(g1, g2, grid, max), brute_conv(g1, g2, grid, min),
                np.maximum(brute_deconv(hi, lo, grid, min, reach), 0),
                np.maximum(brute_deconv(lo, hi, grid, max, reach), 0)]
        mismatches += sum(not np.array_equal(a, b) for a, b in zip(got, want))
    ok = mismatches == 0 and elapsed < 10.0
    record_acceptance(1, ok, f"200 pairs x 4 operations, {mismatches} mismatches, "
                             f"operations took {elapsed:.2f} s")
    assert ok


# --------------------------------------------------------------------------- 2

def test_criterion_02_example_closed_forms():
    ns = np.arange(0, 101, dtype=float)
    worst_inv = 0.0
    for rho in (0.5, 1.0, 2.0):
        for sigma in (0.0, 2.0, 5.0):
            lam = lower_pseudo_inverse(Curve.affine(rho, sigma))
            worst_inv = max(worst_inv, np.max(np.abs(lam(ns) - np.maximum(ns - sigma, 0) / rho)))
    worst_gap = 0.0
    for rho in (0.5, 1.0, 2.0):
        for sigma in (0.0, 2.0, 5.0):
            lam = lower_pseudo_inverse(Curve.affine(rho, sigma))
            for x in (0.0, 1.0, 3.0, 10.0):
                worst_gap = max(worst_gap, abs(sup_forward_gap(lam, x) - x / rho))
    ok = worst_inv <= 1e-12 and worst_gap <= 1e-12
    record_acceptance(2, ok, f"max inverse error {worst_inv:.1e}, max gap error {worst_gap:.1e}")
    assert ok


# --------------------------------------------------------------------------- 3

def test_criterion_03_ccdf_sum_bound_exhaustive():
    rng = np.random.default_rng(31)
    grid = GridSpec(0.25, 14.0)
    total = sum(lemma_one_violations(rng, int(rng.integers(2, 4)), grid) for _ in range(500))
    record_acceptance(3, total == 0, f"500 joint pmfs, {total} violations")
    assert total == 0


# --------------------------------------------------------------------------- 4

def test_criterion_04_negative_binomial_vs_monte_carlo():
    rng = np.random.default_rng(41)
    worst = 0.0
    for n in (1, 2, 5):
        for pe in (0.1, 0.3, 0.5):
            samples = rng.geometric(1 - pe, size=(100_000, n)).sum(axis=1)
            top = int(samples.max()) + 1
            ks = np.arange(0, top + 1)
            tail = negbin_service_tail(pe, n, ks)
            pmf = np.concatenate([[1.0 - tail[0]], tail[:-1] - tail[1:]])
            freq = np.bincount(samples, minlength=top + 1)[: top + 1] / len(samples)
            tv = 0.5 * (np.abs(pmf - freq).sum() + tail[-1])
            worst = max(worst, tv)
    record_acceptance(4, worst < 0.01, f"max total variation {worst:.4f} over 9 (n, Pe) pairs")
    assert worst < 0.01


# --------------------------------------------------------------------------- 5, 6

def test_criterion_05_delay_bound_dominance():
    sc, report, secs = verified("md1_constant.json", ("delay", "backlog"))
    assert sc.simulation["packets"] == 100_000 and sc.simulation["replications"] == 20
    p = verdict_of(report, "delay")
    ok = p.verdict["passed"] and secs < 120
    record_acceptance(5, ok, f"{describe(p)}; run took {secs:.1f} s")
    assert ok


def test_criterion_06_backlog_bound_dominance():
    _, report, _ = verified("md1_constant.json", ("delay", "backlog"))
    p = verdict_of(report, "backlog")
    record_acceptance(6, p.verdict["passed"], describe(p))
    assert p.verdict["passed"]


def batch_means_dominance(seed: int) -> bool:
    """Criterion 5 data judged with replication-level error bars instead of binomial ones."""
    sc = load_scenario(SCENARIOS / "md1_constant.json")
    grid = sc.grid
    xs = grid.points()
    res = delay_bound(sc.traffic_model("f"), sc.server_model("n"), grid)
    freqs = []
    for rep in range(20):
        arr = generate_arrivals(sc.source("f"), 100_000, seed, replication=rep)
        out = serve_fifo(arr, sc.server("n"), seed, replication=rep)
        freqs.append(EmpiricalCCDF.from_samples(out.delays, xs).freqs)
    freqs = np.array(freqs)
    mean = freqs.mean(axis=0)
    se = freqs.std(axis=0, ddof=1) / math.sqrt(len(freqs))
    mask = mean >= 1e-3
    return bool(np.all(mean[mask] <= res.bound(xs)[mask] + 2 * se[mask]))


def test_delay_dominance_with_replication_error_bars():
    assert batch_means_dominance(0)


# --------------------------------------------------------------------------- 7

def test_criterion_07_deterministic_degeneration():
    sc, report, _ = verified("gcra_deterministic.json")
    traffic, server = sc.traffic_model("g"), sc.server_model("n")
    max_delay = min_plus_deconv_at(server.curve, traffic.curve, 0.0)
    max_backlog = horizontal_deviation(traffic.curve, server.curve, 0.0)
    arr = generate_arrivals(sc.source("g"), 100_000, 0)
    out = serve_fifo(arr, sc.server("n"), 0)
    late = int(np.sum(out.delays > max_delay + 1e-9))
    ts = np.arange(0.0, out.departures.max(), 0.05)
    over = int(np.sum(out.backlog(ts) > max_backlog)) + \
        int(np.sum(backlog_at_arrivals(out) > max_backlog))
    runner_ok = all(p.verdict["passed"] for p in report.properties)
    ok = late == 0 and over == 0 and runner_ok
    record_acceptance(7, ok, f"D = {max_delay:g}, B = {max_backlog:g}; {late} late packets, "
                             f"{over} instants over B; observed max delay {out.delays.max():g}")
    assert ok


# --------------------------------------------------------------------------- 8

def test_criterion_08_concatenation_dominance():
    sc, report, _ = verified("wireless_tandem.json")
    p = verdict_of(report, "delay")
    xs = sc.grid.points()
    traffic = sc.traffic_model("f")
    servers = [sc.server_model("a"), sc.server_model("b")]
    lines, good = [], 0
    for eta in (0.05, 0.1, 0.2):
        try:
            res = end_to_end_delay(traffic, servers, eta, sc.grid)
        except Exception as exc:  # an eta may legitimately make the path unstable
            lines.append(f"eta={eta}: {type(exc).__name__}")
            continue
        v = check_dominance(p.empirical, res.bound(xs), p.samples, xs)
        finite = math.isfinite(res.quantile(1e-3))
        good += finite and v.passed
        lines.append(f"eta={eta}: q(1e-3)={res.quantile(1e-3):g} "
                     f"{'pass' if v.passed else 'fail'}")
    ok = good >= 1 and p.verdict["passed"]
    record_acceptance(8, ok, f"selected eta {p.info['eta']} {describe(p)}; " + "; ".join(lines))
    assert ok


# --------------------------------------------------------------------------- 9, 10

def test_criterion_09_superposition():
    _, report, _ = verified("superposition.json")
    p = verdict_of(report, "superposition")
    record_acceptance(9, p.verdict["passed"], describe(p))
    assert p.verdict["passed"]


def test_criterion_10_leftover_service():
    _, report, _ = verified("leftover.json")
    p = verdict_of(report, "leftover")
    record_acceptance(10, p.verdict["passed"], describe(p))
    assert p.verdict["passed"]


# --------------------------------------------------------------------------- 11

SWEEP_GRID = GridSpec(0.05, 40.0)
SWEEP_PACKETS = 10_000
SWEEP_REPS = 10


def pooled(statistic, source: SourceSpec, server=None):
    """Concatenate a statistic over independent 10^4-packet replications."""
    parts = []
    for rep in range(SWEEP_REPS):
        tr = generate_arrivals(source, SWEEP_PACKETS, 0, replication=rep)
        if server is not None:
            tr = serve_fifo(tr, server, 0, replication=rep)
        parts.append(statistic(tr))
    return parts


def dominated(samples_or_tail, bound) -> tuple:
    xs = SWEEP_GRID.points()
    if isinstance(samples_or_tail, EmpiricalCCDF):
        tail = samples_or_tail
    else:
        tail = EmpiricalCCDF.from_samples(np.concatenate(samples_or_tail), xs)
    v = check_dominance(tail.freqs, bound(xs), tail.count, xs)
    return v.passed, len(v.violations)


def iat_pooled(source, lam):
    xs = SWEEP_GRID.points()
    tail = EmpiricalCCDF.empty(xs)
    for rep in range(SWEEP_REPS):
        tail = tail.merge(iat_tail(generate_arrivals(source, SWEEP_PACKETS, 0, replication=rep),
                                   lam, xs))
    return tail


def test_criterion_11_conversion_soundness_sweep():
    g = SWEEP_GRID
    checks = {}

    # traffic: Poisson flows carry their M/D/1 v.s.d model
    poisson = SourceSpec("poisson", rate=1.0)
    vsd = md1_vsd_arrival(1.0, 0.5, g)
    src = dominated(pooled(lambda t: vsd_statistic(t, vsd.curve), poisson), vsd.bound)
    iat = vsd_to_iat(vsd)
    checks["vsd_to_iat"] = (src, dominated(iat_pooled(poisson, iat.curve), iat.bound))

    back = iat_to_vsd(iat, 0.2, g)
    src = dominated(iat_pooled(poisson, iat.curve), iat.bound)
    checks["iat_to_vsd"] = (src, dominated(pooled(lambda t: vsd_statistic(t, back.curve),
                                                  poisson), back.bound))

    slow = SourceSpec("poisson", rate=0.5)
    vsd_slow = md1_vsd_arrival(0.5, 1.0, g)
    vbc = vsd_to_vbc(vsd_slow, g)
    src = dominated(pooled(lambda t: vsd_statistic(t, vsd_slow.curve), slow), vsd_slow.bound)
    checks["vsd_to_vbc"] = (src, dominated(pooled(lambda t: vbc_statistic(t, vbc.curve), slow),
                                           vbc.bound))

    again = vbc_to_vsd(vbc, g)
    src = dominated(pooled(lambda t: vbc_statistic(t, vbc.curve), slow), vbc.bound)
    checks["vbc_to_vsd"] = (src, dominated(pooled(lambda t: vsd_statistic(t, again.curve), slow),
                                           again.bound))

    # service: a lossy slotted link fed by Poisson(0.4)
    feed = SourceSpec("poisson", rate=0.4)
    link = ServerSpec("slotted_wireless", delta=1.0, Pe=0.3)
    wid = wireless_id_server(1.0, 0.3, grid=g)
    src = dominated(pooled(lambda t: id_statistic(t, wid.curve), feed, link), wid.bound)
    wcs = id_to_cs(wid, 0.2, g)
    checks["id_to_cs"] = (src, dominated(pooled(lambda t: cs_statistic(t, wcs.curve), feed, link),
                                         wcs.bound))

    src = dominated(pooled(lambda t: cs_statistic(t, wcs.curve), feed, link), wcs.bound)
    wid2 = cs_to_id(wcs)
    checks["cs_to_id"] = (src, dominated(pooled(lambda t: id_statistic(t, wid2.curve), feed, link),
                                         wid2.bound))

    ok = all(s[0] and t[0] for s, t in checks.values())
    detail = "; ".join(f"{k}: source {'ok' if s[0] else 'VIOLATED'}, "
                       f"target {'ok' if t[0] else f'{t[1]} violations'}"
                       for k, (s, t) in checks.items())
    record_acceptance(11, ok, detail)
    assert ok


# --------------------------------------------------------------------------- 12

def test_criterion_12_pseudo_inverse_round_trip():
    rng = np.random.default_rng(1212)
    bad = 0
    for _ in range(100):
        alpha = random_staircase(rng, steps=int(rng.integers(3, 12)))
        back = upper_pseudo_inverse(lower_pseudo_inverse(alpha))
        ts = np.arange(0.0, alpha.last_x + 4.0, 0.25)
        bad += not np.array_equal(back(ts), alpha(ts))
    record_acceptance(12, bad == 0, f"100 staircases, {bad} mismatches")
    assert bad == 0


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
