import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdsnc.bounding import BoundingFn
from tdsnc.curves import Curve, GridSpec
from tdsnc.models import (CertificateError, ModelError, ServerModel, TrafficModel,
                          as_server_kind, as_traffic_kind, constant_server, cs_to_id,
                          gcra_arrival, iat_to_vsd, id_to_cs, md1_vsd_arrival,
                          poisson_iat_arrival, vbc_to_vsd, vsd_to_iat, vsd_to_vbc,
                          wireless_id_server, wireless_slot_budget)

GRID = GridSpec(0.05, 20.0)


def test_gcra_curve():
    m = gcra_arrival(2.0, 3.0)
    assert m.kind == "DET" and m.bound.is_deterministic
    np.testing.assert_allclose(m.curve([0, 1, 1.5, 2, 5]), [0, 0, 0, 1, 7])
    np.testing.assert_allclose(gcra_arrival(1.5, 0).curve([0, 2, 4]), [0, 3, 6])


def test_constant_server_counts_the_packet_itself():
    s = constant_server(0.5)
    np.testing.assert_allclose(s.curve([0, 1, 4]), [0.5, 1.0, 2.5])


def test_wireless_server_curve_and_budget():
    assert wireless_slot_budget(0.0) == 1.0
    assert wireless_slot_budget(0.5, 0.1) == pytest.approx(2.2)
    s = wireless_id_server(1.0, 0.5, grid=GRID)
    np.testing.assert_allclose(s.curve([0, 1, 2]), [1 + 2.2, 1 + 4.4, 1 + 6.6])
    assert s.bound.f_class
    lossless = wireless_id_server(1.0, 0.0, grid=GRID)
    assert lossless.bound.is_deterministic
    np.testing.assert_allclose(lossless.curve([0, 3]), [2, 5])


@pytest.mark.parametrize("pe", [1.0, 1.2, -0.1])
def test_wireless_rejects_bad_loss(pe):
    with pytest.raises(ModelError):
        wireless_id_server(1.0, pe)


def test_bad_constructor_arguments():
    with pytest.raises(ModelError):
        gcra_arrival(0.0, 1.0)
    with pytest.raises(ModelError):
        constant_server(-1.0)
    with pytest.raises(ModelError):
        TrafficModel("FOO", Curve.affine(1.0))
    with pytest.raises(ModelError):
        TrafficModel("DET", Curve.affine(1.0), BoundingFn.exponential(0.5, 1.0))


def test_kind_weakening_rules():
    det = gcra_arrival(1.0, 0.0)
    for k in ("IAT", "VSD", "MSD"):
        assert as_traffic_kind(det, k).kind == k
    vsd = md1_vsd_arrival(1.0, 0.5, GRID)
    assert as_traffic_kind(vsd, "IAT").kind == "IAT"
    with pytest.raises(ModelError):
        as_traffic_kind(vsd, "MSD")
    with pytest.raises(ModelError):
        as_traffic_kind(vsd_to_iat(vsd), "VSD")
    s = constant_server(1.0)
    assert as_server_kind(s, "CS").kind == "CS"
    with pytest.raises(ModelError):
        as_server_kind(wireless_id_server(1.0, 0.3, grid=GRID), "CS")


def test_vsd_to_iat_keeps_curve_and_bound():
    vsd = md1_vsd_arrival(1.0, 0.5, GRID)
    iat = vsd_to_iat(vsd)
    assert iat.kind == "IAT" and iat.curve == vsd.curve and iat.bound is vsd.bound


def test_poisson_iat_is_not_certified():
    m = poisson_iat_arrival(0.5, GRID)
    assert not m.bound.f_class
    with pytest.raises(CertificateError):
        iat_to_vsd(m, 0.1, GRID)


def test_eta_must_be_positive():
    with pytest.raises(ModelError):
        iat_to_vsd(vsd_to_iat(md1_vsd_arrival(1.0, 0.5, GRID)), 0.0, GRID)
    with pytest.raises(ModelError):
        id_to_cs(wireless_id_server(1.0, 0.3, grid=GRID), -0.1, GRID)


def test_iat_to_vsd_lowers_curve_and_raises_bound():
    iat = vsd_to_iat(md1_vsd_arrival(1.0, 0.5, GRID))
    vsd = iat_to_vsd(iat, 0.2, GRID)
    ns = np.arange(0, 30.0)
    np.testing.assert_allclose(vsd.curve(ns), 0.3 * ns)
    xs = GRID.points()
    assert np.all(vsd.bound(xs) >= iat.bound(xs))


def test_iat_to_vsd_floors_an_overshooting_eta():
    iat = vsd_to_iat(md1_vsd_arrival(1.0, 0.5, GRID))
    vsd = iat_to_vsd(iat, 0.7, GRID)
    assert vsd.curve.tail_slope == 0.0 and vsd.curve(10.0) == 0.0


def test_id_to_cs_and_back():
    s = wireless_id_server(1.0, 0.3, grid=GRID)
    cs = id_to_cs(s, 0.2, GRID)
    ns = np.arange(0, 20.0)
    np.testing.assert_allclose(cs.curve(ns), s.curve(ns) + 0.2 * ns)
    assert cs_to_id(cs).kind == "ID"
    xs = GRID.points()
    assert np.all(cs.bound(xs) >= s.bound(xs))


def test_json_round_trip_of_models():
    t = md1_vsd_arrival(1.0, 0.5, GRID)
    assert TrafficModel.from_json(t.to_json()).to_json() == t.to_json()
    s = wireless_id_server(1.0, 0.3, grid=GRID)
    s2 = ServerModel.from_json(s.to_json())
    assert s2.curve == s.curve
    np.testing.assert_array_equal(s2.bound(GRID.points()), s.bound(GRID.points()))


# ------------------------------------------------------- exhaustive eta oracle

def exact_tail(samples, probs, xs):
    order = np.argsort(samples)
    s, p = samples[order], probs[order]
    tail = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
    return tail[np.searchsorted(s, xs, side="right")]


def enumerate_sequences(values, probs, length):
    idx = np.array(list(itertools.product(range(len(values)), repeat=length)))
    return np.asarray(values)[idx], np.prod(np.asarray(probs)[idx], axis=1)


def pairwise_table(seqs, probs, stat_of_window, step, size):
    """Exact ``max over windows of P{stat > x}`` tabulated at left grid points."""
    xs = np.arange(size) * step
    best = np.zeros(size)
    for length in range(1, seqs.shape[1] + 1):
        best = np.maximum(best, exact_tail(stat_of_window(seqs[:, -length:]), probs, xs))
    return BoundingFn.table(step, np.append(best, 0.0))


VALUES, PROBS = [0.0, 1.0, 2.0, 3.0], [0.3, 0.3, 0.2, 0.2]
N_GAPS = 8


@pytest.mark.parametrize("eta", [0.1, 0.3])
def test_iat_to_vsd_against_enumeration(eta):
    rate = 1.0
    step = 0.25
    gaps, probs = enumerate_sequences(VALUES, PROBS, N_GAPS)
    h = pairwise_table(gaps, probs, lambda w: (rate - w).sum(axis=1), step, 40)
    iat = TrafficModel("IAT", Curve.affine(rate), h)
    vsd = iat_to_vsd(iat, eta, GridSpec(step, 10.0))
    # sup over the window start of lambda(n-m) - eta (n-m) - (a(n) - a(m)), m = n included
    sums = np.cumsum((rate - eta - gaps)[:, ::-1], axis=1)
    stat = np.maximum(sums.max(axis=1), 0.0)
    xs = np.concatenate([np.arange(0, 10, step), np.arange(0, 10, step) + step / 2])
    exact = exact_tail(stat, probs, xs)
    assert np.all(exact <= vsd.bound(xs) + 1e-12)
    np.testing.assert_allclose(vsd.curve(np.arange(9.0)), (rate - eta) * np.arange(9.0))


@pytest.mark.parametrize("eta", [0.1, 0.3])
def test_id_to_cs_against_enumeration(eta):
    unit = 1.3
    step = 0.25
    service = [0.5, 1.0, 1.5, 2.0]
    probs_s = [0.3, 0.4, 0.2, 0.1]
    seqs, probs = enumerate_sequences(service, probs_s, N_GAPS)
    # window of L packets: sum of service times minus gamma(L - 1) = unit * L
    j = pairwise_table(seqs, probs, lambda w: w.sum(axis=1) - unit * w.shape[1], step, 40)
    s = ServerModel("ID", Curve.affine(unit, unit), j)
    cs = id_to_cs(s, eta, GridSpec(step, 10.0))
    lengths = np.arange(1, N_GAPS + 1)
    sums = np.cumsum(seqs[:, ::-1], axis=1) - (unit + eta) * lengths + eta
    stat = sums.max(axis=1)
    xs = np.concatenate([np.arange(0, 10, step), np.arange(0, 10, step) + step / 2])
    exact = exact_tail(stat, probs, xs)
    assert np.all(exact <= cs.bound(xs) + 1e-12)


def test_inflated_bound_is_not_vacuous_on_enumeration():
    # guard against a trivially large bound passing the oracle above
    gaps, probs = enumerate_sequences(VALUES, PROBS, N_GAPS)
    h = pairwise_table(gaps, probs, lambda w: (1.0 - w).sum(axis=1), 0.25, 40)
    vsd = iat_to_vsd(TrafficModel("IAT", Curve.affine(1.0), h), 0.3, GridSpec(0.25, 10.0))
    assert vsd.bound(3.0) < 0.5


# ------------------------------------------------------- hierarchy properties

md1_params = st.tuples(st.sampled_from([0.5, 1.0, 2.0]), st.floats(0.2, 0.8))


@settings(max_examples=8, deadline=None)
@given(md1_params)
def test_vsd_vbc_round_trip_only_weakens(params):
    mu, load = params
    grid = GridSpec(0.1, 20.0)
    vsd = md1_vsd_arrival(mu, load / mu, grid)
    back = vbc_to_vsd(vsd_to_vbc(vsd, grid), grid)
    ns = np.arange(0, 40.0)
    assert np.all(back.curve(ns) <= vsd.curve(ns) + 1e-9)
    xs = grid.points()
    assert np.all(back.bound(xs) >= vsd.bound(xs) - 1e-12)


@settings(max_examples=8, deadline=None)
@given(md1_params, st.sampled_from([0.05, 0.1, 0.3]))
def test_iat_vsd_round_trip_only_weakens(params, eta):
    mu, load = params
    grid = GridSpec(0.1, 20.0)
    vsd = md1_vsd_arrival(mu, load / mu, grid)
    back = iat_to_vsd(vsd_to_iat(vsd), eta, grid)
    ns = np.arange(0, 40.0)
    assert np.all(back.curve(ns) <= vsd.curve(ns) + 1e-9)
    assert np.all(back.bound(grid.points()) >= vsd.bound(grid.points()) - 1e-12)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.0, 0.8), st.sampled_from([0.05, 0.2]))
def test_conversions_stay_in_the_curve_class(pe, eta):
    grid = GridSpec(0.1, 20.0)
    cs = id_to_cs(wireless_id_server(1.0, pe, grid=grid), eta, grid)
    for c in (cs.curve, vsd_to_vbc(md1_vsd_arrival(1.0, 0.5, grid), grid).curve):
        vals = c(np.arange(0, 50, 0.5))
        assert vals[0] >= 0 and np.all(np.diff(vals) >= -1e-12)
    vals = cs.bound(grid.points())
    assert np.all((vals >= 0) & (vals <= 1)) and np.all(np.diff(vals) <= 1e-15)


def test_wireless_bound_grows_with_loss():
    grid = GridSpec(0.1, 20.0)
    prev = None
    for pe in (0.1, 0.3, 0.5):
        s = wireless_id_server(1.0, pe, grid=grid)
        if prev is not None:
            # same budget slack, so a larger loss rate scales up the curve
            assert s.curve(10.0) > prev.curve(10.0)
        prev = s
    assert math.isfinite(prev.bound.exp_envelope[1])
