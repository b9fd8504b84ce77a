"""Discrete-event simulation of the channel pool under an admission policy.

The event loop lives in :func:`simulate_kernel`, compiled with numba unless
``CACLAB_NUMBA=0``. Arrival epochs and holding times are drawn up front with
numpy (one stream per class), so a given seed produces the same offered
traffic for every policy and for both backends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .errors import InvalidParameterError
from .policies import FNCAC, REJECT_ALL, AdmissionPolicy, NetworkSnapshot, rule_decide
from .rrbfn import fill_features, forward_step
from .traffic import ClassId, SystemConfig, draw_call_streams

ARRIVAL = 0
DEPARTURE = 1
Z95 = 1.959963984540054


@dataclass(frozen=True, order=True)
class Event:
    """Queue entry; ordering is by time, then by insertion sequence number."""

    time: float
    seq: int
    kind: int = field(compare=False)
    payload: int = field(compare=False)


@dataclass(frozen=True)
class SimReport:
    offered_per_class: tuple[int, ...]
    blocked_per_class: tuple[int, ...]
    empirical_blocking_per_class: tuple[float, ...]
    aggregate_blocking: float
    half_width_95: tuple[float, ...]
    aggregate_half_width_95: float
    peak_occupancy: int
    seed: int
    class_ids: tuple[ClassId, ...] = ()
    events: int = 0
    invariant_violations: int = 0
    metadata: dict = field(default_factory=dict, compare=False)

    def blocking(self, class_id: ClassId) -> float:
        return self.empirical_blocking_per_class[self.class_ids.index(class_id)]

    def half_width(self, class_id: ClassId) -> float:
        return self.half_width_95[self.class_ids.index(class_id)]

    @property
    def offered(self) -> int:
        return int(sum(self.offered_per_class))


def proportion(blocked: int, offered: int) -> tuple[float, float]:
    """Point estimate and 95% normal-approximation half-width of a binomial proportion."""
    if offered == 0:
        return 0.0, 0.0
    p = blocked / offered
    return p, Z95 * math.sqrt(p * (1.0 - p) / offered)


@dataclass
class Occupancy:
    """Mutable per-RAT occupancy used outside the kernel (tests, debugging)."""

    capacities: tuple[int, ...]
    active: np.ndarray  # (K, 3) calls per RAT and ClassId

    @classmethod
    def empty(cls, capacities) -> "Occupancy":
        return cls(tuple(capacities), np.zeros((len(capacities), 3), dtype=np.int64))

    def admit(self, rat: int, class_id: ClassId):
        if snapshot(self)[rat].available < class_id.demand:
            raise InvalidParameterError("call does not fit")
        self.active[rat, int(class_id)] += 1

    def release(self, rat: int, class_id: ClassId):
        if self.active[rat, int(class_id)] == 0:
            raise InvalidParameterError("no such call")
        self.active[rat, int(class_id)] -= 1


def snapshot(state: Occupancy) -> list[NetworkSnapshot]:
    """One consistent snapshot per RAT pool."""
    return [NetworkSnapshot.from_active(cap, state.active[k])
            for k, cap in enumerate(state.capacities)]


# -- kernel ----------------------------------------------------------------------


@njit
def _before(ht, hs, a, b):
    return ht[a] < ht[b] or (ht[a] == ht[b] and hs[a] < hs[b])


@njit
def _swap(ht, hs, hk, hp, a, b):
    ht[a], ht[b] = ht[b], ht[a]
    hs[a], hs[b] = hs[b], hs[a]
    hk[a], hk[b] = hk[b], hk[a]
    hp[a], hp[b] = hp[b], hp[a]


@njit
def heap_push(ht, hs, hk, hp, size, t, seq, kind, payload):
    i = size
    ht[i] = t
    hs[i] = seq
    hk[i] = kind
    hp[i] = payload
    while i > 0:
        parent = (i - 1) // 2
        if _before(ht, hs, parent, i):
            break
        _swap(ht, hs, hk, hp, parent, i)
        i = parent
    return size + 1


@njit
def heap_pop(ht, hs, hk, hp, size):
    """Remove the earliest entry; returns (new_size, time, kind, payload)."""
    t, kind, payload = ht[0], hk[0], hp[0]
    size -= 1
    if size > 0:
        _swap(ht, hs, hk, hp, 0, size)
        i = 0
        while True:
            left = 2 * i + 1
            if left >= size:
                break
            child = left
            if left + 1 < size and _before(ht, hs, left + 1, left):
                child = left + 1
            if _before(ht, hs, i, child):
                break
            _swap(ht, hs, hk, hp, i, child)
            i = child
    return size, t, kind, payload


@njit
def simulate_kernel(arrivals, holding, counts, demands, class_types, caps, warmup, horizon,
                    kind, thr, fz, rec_w, centers, widths, out_w, out_b, cost_bias, state,
                    check):
    """Event loop. Returns (offered, blocked, peak_occupancy, violations, events)."""
    n_cls = arrivals.shape[0]
    n_rat = caps.shape[0]
    slots = caps.sum() + n_cls + 1
    ht = np.empty(slots)
    hs = np.empty(slots, dtype=np.int64)
    hk = np.empty(slots, dtype=np.int64)
    hp = np.empty(slots, dtype=np.int64)
    size = 0
    seq = 0

    avail = caps.copy()
    active = np.zeros((n_rat, 3), dtype=np.int64)
    offered = np.zeros(n_cls, dtype=np.int64)
    blocked = np.zeros(n_cls, dtype=np.int64)
    next_idx = np.zeros(n_cls, dtype=np.int64)
    feats = np.zeros(n_rat + 5)
    busy = 0
    peak = 0
    violations = 0
    events = 0

    for i in range(n_cls):
        if counts[i] > 0:
            size = heap_push(ht, hs, hk, hp, size, arrivals[i, 0], seq, ARRIVAL, i)
            seq += 1
            next_idx[i] = 1

    while size > 0:
        size, t, ev, payload = heap_pop(ht, hs, hk, hp, size)
        if t > horizon:
            break
        events += 1
        if ev == DEPARTURE:
            r = payload // n_cls
            i = payload % n_cls
            avail[r] += demands[i]
            active[r, class_types[i]] -= 1
            busy -= demands[i]
            continue

        i = payload
        cur = next_idx[i] - 1
        if next_idx[i] < counts[i]:
            size = heap_push(ht, hs, hk, hp, size, arrivals[i, next_idx[i]], seq, ARRIVAL, i)
            seq += 1
            next_idx[i] += 1

        if check:
            for r in range(n_rat):
                used = 0
                for c in range(3):
                    used += active[r, c] * (c + 1)
                if avail[r] != caps[r] - used or avail[r] < 0:
                    violations += 1

        d = demands[i]
        ctype = class_types[i]
        target = -1
        if kind == FNCAC:
            fill_features(feats, avail, caps, d, ctype, cost_bias)
            score = forward_step(feats, state, rec_w, centers, widths, out_w, out_b)
            if score >= 0.5:
                for r in range(n_rat):
                    if avail[r] >= d:
                        target = r
                        break
        elif kind != REJECT_ALL:
            for r in range(n_rat):
                ok, _ = rule_decide(kind, thr, fz, avail[r], caps[r], ctype, d)
                if ok:
                    target = r
                    break

        counted = t >= warmup
        if counted:
            offered[i] += 1
        if target < 0:
            if counted:
                blocked[i] += 1
            continue
        if avail[target] < d:
            violations += 1
            continue
        avail[target] -= d
        active[target, ctype] += 1
        busy += d
        if busy > peak:
            peak = busy
        size = heap_push(ht, hs, hk, hp, size, t + holding[i, cur], seq, DEPARTURE,
                         target * n_cls + i)
        seq += 1

    return offered, blocked, peak, violations, events


_EMPTY1 = np.zeros(1)
_EMPTY2 = np.zeros((1, 1))


def kernel_args(config: SystemConfig, policy: AdmissionPolicy):
    """Positional policy arguments of :func:`simulate_kernel` (state array is a fresh copy)."""
    kp = policy.kernel()
    if kp.network is not None:
        rec_w, centers, widths, out_w, out_b, cost_bias = kp.network
        expected = len(config.rats) + 5
        if centers.shape[1] != expected:
            raise InvalidParameterError(
                f"network expects {centers.shape[1]} inputs; this system provides {expected}"
            )
        state = np.zeros(centers.shape[1])
    else:
        rec_w, centers, widths, out_w, out_b, cost_bias = _EMPTY1, _EMPTY2, _EMPTY1, _EMPTY1, 0.0, 0.0
        state = np.zeros(1)
    return (np.int64(kp.kind), np.asarray(kp.thresholds, dtype=np.int64),
            np.asarray(kp.fuzzy, dtype=np.float64), rec_w, centers, widths, out_w,
            float(out_b), float(cost_bias), state)


def run(config: SystemConfig, policy: AdmissionPolicy, warmup: float, horizon: float,
        seed: int, check_invariants: bool = False, kernel=None) -> SimReport:
    """Simulate ``[0, horizon]``; only arrivals at or after ``warmup`` enter the statistics."""
    if not (horizon > warmup >= 0):
        raise InvalidParameterError("need horizon > warmup >= 0")
    streams = draw_call_streams(config, horizon, seed)
    kernel = simulate_kernel if kernel is None else kernel
    offered, blocked, peak, violations, events = kernel(
        streams.arrivals, streams.holding, streams.counts, config.demands,
        np.array([int(c.id) for c in config.classes], dtype=np.int64),
        np.array(config.rats, dtype=np.int64), float(warmup), float(horizon),
        *kernel_args(config, policy), bool(check_invariants),
    )
    return _report(config, offered, blocked, int(peak), int(violations), int(events), seed)


def _report(config, offered, blocked, peak, violations, events, seed) -> SimReport:
    est = [proportion(int(b), int(o)) for b, o in zip(blocked, offered)]
    agg, agg_hw = proportion(int(np.sum(blocked)), int(np.sum(offered)))
    return SimReport(
        offered_per_class=tuple(int(o) for o in offered),
        blocked_per_class=tuple(int(b) for b in blocked),
        empirical_blocking_per_class=tuple(p for p, _ in est),
        aggregate_blocking=agg,
        half_width_95=tuple(h for _, h in est),
        aggregate_half_width_95=agg_hw,
        peak_occupancy=peak,
        seed=int(seed),
        class_ids=tuple(c.id for c in config.classes),
        events=events,
        invariant_violations=violations,
    )


def pool_reports(config: SystemConfig, reports: list[SimReport]) -> SimReport:
    """Merge replications by summing counts."""
    offered = np.sum([r.offered_per_class for r in reports], axis=0)
    blocked = np.sum([r.blocked_per_class for r in reports], axis=0)
    return _report(config, offered, blocked, max(r.peak_occupancy for r in reports),
                   sum(r.invariant_violations for r in reports),
                   sum(r.events for r in reports), reports[0].seed)


def horizon_for_arrivals(config: SystemConfig, n_arrivals: float) -> float:
    """Simulated time over which ``n_arrivals`` calls are offered on average."""
    total = float(config.arrival_rates.sum())
    if total <= 0:
        return float(n_arrivals)
    return n_arrivals / total
