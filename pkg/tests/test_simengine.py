import heapq
import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from caclab._jit import python_impl
from caclab.errors import InvalidParameterError
from caclab.markov import analyze, erlang_b
from caclab.policies import AdmitIfFits, FuzzyPolicy, RejectAll, ThresholdPolicy
from caclab.rrbfn import FncacPolicy
from caclab.simengine import (
    ARRIVAL,
    DEPARTURE,
    Event,
    Occupancy,
    SimReport,
    heap_pop,
    heap_push,
    horizon_for_arrivals,
    pool_reports,
    proportion,
    run,
    simulate_kernel,
    snapshot,
)
from caclab.traffic import ClassId, SystemConfig, ThresholdSet, TrafficClass, canonical_classes, draw_call_streams


def reference_run(config, policy, warmup, horizon, seed):
    """Plain heapq event loop over the same pre-drawn call streams."""
    streams = draw_call_streams(config, horizon, seed)
    seq = itertools.count()
    queue = []
    nxt = [0] * len(config.classes)
    for i, n in enumerate(streams.counts):
        if n:
            heapq.heappush(queue, Event(streams.arrivals[i, 0], next(seq), ARRIVAL, i))
            nxt[i] = 1
    occ = Occupancy.empty(config.rats)
    offered = np.zeros(len(config.classes), dtype=np.int64)
    blocked = np.zeros_like(offered)
    while queue:
        ev = heapq.heappop(queue)
        if ev.time > horizon:
            break
        if ev.kind == DEPARTURE:
            rat, i = divmod(ev.payload, len(config.classes))
            occ.release(rat, config.classes[i].id)
            continue
        i = ev.payload
        cur = nxt[i] - 1
        if nxt[i] < streams.counts[i]:
            heapq.heappush(queue, Event(streams.arrivals[i, nxt[i]], next(seq), ARRIVAL, i))
            nxt[i] += 1
        cls = config.classes[i]
        k = policy.place(snapshot(occ), cls)
        counted = ev.time >= warmup
        offered[i] += counted
        if k < 0:
            blocked[i] += counted
            continue
        occ.admit(k, cls.id)
        heapq.heappush(queue, Event(ev.time + streams.holding[i, cur], next(seq), DEPARTURE,
                                    k * len(config.classes) + i))
    return offered, blocked


def three(n, a=1.0, **kw):
    return SystemConfig(n, canonical_classes(a, 1.0), **kw)


# -- heap --------------------------------------------------------------------------


@given(st.lists(st.floats(0, 100).map(lambda x: round(x, 1)), min_size=1, max_size=80))
def test_heap_orders_by_time_then_sequence(times):
    n = len(times)
    ht, hs = np.empty(n), np.empty(n, dtype=np.int64)
    hk, hp = np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64)
    size = 0
    for s, t in enumerate(times):
        size = heap_push(ht, hs, hk, hp, size, t, s, 0, s)
    out = []
    while size:
        size, t, _, payload = heap_pop(ht, hs, hk, hp, size)
        out.append((t, payload))
    assert out == sorted((t, s) for s, t in enumerate(times))


def test_event_ordering():
    assert Event(1.0, 5, ARRIVAL, 0) < Event(1.0, 6, DEPARTURE, 0) < Event(2.0, 0, ARRIVAL, 0)


# -- occupancy ---------------------------------------------------------------------


def test_snapshot_examples():
    occ = Occupancy.empty((10,))
    assert snapshot(occ)[0].available == 10
    occ.admit(0, ClassId.TYPE3)
    assert snapshot(occ)[0].available == 7
    occ.release(0, ClassId.TYPE3)
    with pytest.raises(InvalidParameterError):
        occ.release(0, ClassId.TYPE3)
    with pytest.raises(InvalidParameterError):
        Occupancy.empty((2,)).admit(0, ClassId.TYPE3)


# -- runs --------------------------------------------------------------------------


def test_no_traffic():
    rep = run(three(6, 0.0), AdmitIfFits(), 0.0, 100.0, 1)
    assert rep.offered == 0 and sum(rep.blocked_per_class) == 0
    assert rep.aggregate_blocking == 0.0 and rep.peak_occupancy == 0


def test_run_validates_window():
    with pytest.raises(InvalidParameterError):
        run(three(6), AdmitIfFits(), 10.0, 10.0, 0)


def test_single_channel_erlang():
    cfg = SystemConfig(1, (TrafficClass(ClassId.TYPE1, 1.0, 1.0),))
    rep = run(cfg, AdmitIfFits(), 0.0, 1e6, 3)
    assert abs(rep.aggregate_blocking - erlang_b(1, 1.0)) < 0.01


@pytest.mark.parametrize("policy", [AdmitIfFits(), ThresholdPolicy(ThresholdSet(2, 4, 6)),
                                    FuzzyPolicy()])
def test_matches_ctmc_within_three_half_widths(policy):
    cfg = three(10, 0.9)
    exact = analyze(cfg, policy)
    rep = run(cfg, policy, 1e3, horizon_for_arrivals(cfg, 3e5), 11)
    for c in ClassId:
        assert abs(rep.blocking(c) - exact.for_class(c)) <= 3 * rep.half_width(c) + 1e-12


def test_multi_rat_matches_ctmc():
    cfg = three(8, 1.0, rats=(5, 3), thresholds=ThresholdSet(0, 1, 3))
    policy = ThresholdPolicy(cfg.thresholds)
    exact = analyze(cfg, policy)
    rep = run(cfg, policy, 1e3, horizon_for_arrivals(cfg, 3e5), 12)
    for c in ClassId:
        assert abs(rep.blocking(c) - exact.for_class(c)) <= 3 * rep.half_width(c) + 1e-12


@pytest.mark.parametrize("policy", [AdmitIfFits(), RejectAll(), FuzzyPolicy(),
                                    ThresholdPolicy(ThresholdSet(2, 4, 6))])
def test_kernel_equals_reference_simulator(policy):
    cfg = three(9, 0.8, rats=(6, 3), thresholds=ThresholdSet(1, 2, 3))
    if isinstance(policy, ThresholdPolicy):
        cfg = three(12, 0.8)
    rep = run(cfg, policy, 20.0, 3000.0, 5)
    offered, blocked = reference_run(cfg, policy, 20.0, 3000.0, 5)
    assert rep.offered_per_class == tuple(offered)
    assert rep.blocked_per_class == tuple(blocked)


def test_fncac_kernel_equals_reference_simulator(trained, pool30):
    cfg = pool30.with_utilization(1.0)
    rep = run(cfg, FncacPolicy(trained.params), 10.0, 2000.0, 6)
    offered, blocked = reference_run(cfg, FncacPolicy(trained.params), 10.0, 2000.0, 6)
    assert rep.offered_per_class == tuple(offered)
    assert rep.blocked_per_class == tuple(blocked)


def test_fncac_input_width_checked(trained):
    with pytest.raises(InvalidParameterError):
        run(three(30, rats=(10, 10, 10)), FncacPolicy(trained.params), 0.0, 10.0, 0)


def test_invariant_sweep_and_peak():
    cfg = three(10, 1.5)
    rep = run(cfg, AdmitIfFits(), 0.0, 2e4, 8, check_invariants=True)
    assert rep.invariant_violations == 0
    assert 0 < rep.peak_occupancy <= 10
    for o, b, p in zip(rep.offered_per_class, rep.blocked_per_class,
                       rep.empirical_blocking_per_class):
        assert b <= o and p == b / o


def test_deterministic():
    cfg = three(12, 0.9)
    assert run(cfg, FuzzyPolicy(), 10.0, 5e3, 21) == run(cfg, FuzzyPolicy(), 10.0, 5e3, 21)
    assert run(cfg, FuzzyPolicy(), 10.0, 5e3, 21) != run(cfg, FuzzyPolicy(), 10.0, 5e3, 22)


def test_blocking_grows_with_load():
    prev = None
    for a in (0.6, 0.9, 1.2):
        cfg = three(10, a)
        rep = run(cfg, AdmitIfFits(), 100.0, horizon_for_arrivals(cfg, 1e5), 4)
        if prev is not None:
            assert rep.aggregate_blocking >= prev.aggregate_blocking - 3 * (
                rep.aggregate_half_width_95 + prev.aggregate_half_width_95)
        prev = rep


def test_pooling_sums_counts():
    cfg = three(6)
    reps = [run(cfg, AdmitIfFits(), 0.0, 500.0, s) for s in range(3)]
    pooled = pool_reports(cfg, reps)
    assert pooled.offered == sum(r.offered for r in reps)
    assert pooled.blocked_per_class == tuple(np.sum([r.blocked_per_class for r in reps], axis=0))


def test_proportion():
    assert proportion(0, 0) == (0.0, 0.0)
    p, h = proportion(50, 100)
    assert p == 0.5 and h == pytest.approx(1.959963984540054 * 0.05)


def test_horizon_for_arrivals():
    assert horizon_for_arrivals(three(6, 2.0), 600) == 100.0
    assert horizon_for_arrivals(three(6, 0.0), 600) == 600.0


# -- backends ----------------------------------------------------------------------


def test_python_kernel_matches_compiled():
    cfg = three(8, 0.9, rats=(5, 3), thresholds=ThresholdSet(0, 1, 3))
    fast = run(cfg, FuzzyPolicy(), 5.0, 400.0, 2)
    slow = run(cfg, FuzzyPolicy(), 5.0, 400.0, 2, kernel=python_impl(simulate_kernel))
    assert fast == slow


def test_env_flag_selects_python_backend(tmp_path):
    code = (
        "from caclab._jit import BACKEND; from caclab.simengine import run;"
        "from caclab.policies import ThresholdPolicy;"
        "from caclab.traffic import SystemConfig, canonical_classes;"
        "cfg = SystemConfig(12, canonical_classes(0.9, 1.0));"
        "r = run(cfg, ThresholdPolicy(cfg.thresholds), 5.0, 300.0, 7);"
        "print(BACKEND, r.offered_per_class, r.blocked_per_class)"
    )
    env = dict(os.environ, CACLAB_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split(" ", 1)
    assert out[0] == "python"
    cfg = three(12, 0.9)
    r = run(cfg, ThresholdPolicy(cfg.thresholds), 5.0, 300.0, 7)
    assert out[1].strip() == f"{r.offered_per_class} {r.blocked_per_class}"
