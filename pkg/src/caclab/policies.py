"""Admission decisions: the policy interface, the tiered threshold rule and the fuzzy baseline.

Every rule-based policy decides on one pool snapshot. With several RAT pools
the call goes to the first pool whose snapshot the policy admits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._jit import njit
from .errors import InvalidParameterError
from .traffic import MAX_DEMAND, ClassId, ThresholdSet, TrafficClass

# kernel policy codes
ADMIT_IF_FITS = 0
REJECT_ALL = 1
THRESHOLD = 2
FUZZY = 3
FNCAC = 4

MAX_DEMAND_F = float(MAX_DEMAND)
# scores within this distance below the accept threshold count as ties (and ties admit)
TIE_EPS = 1e-12


class Verdict(enum.Enum):
    ADMIT = "admit"
    REJECT = "reject"


@dataclass(frozen=True)
class AdmissionDecision:
    verdict: Verdict
    score: float

    @property
    def admitted(self) -> bool:
        return self.verdict is Verdict.ADMIT

    @classmethod
    def of(cls, admit: bool, score: float | None = None) -> "AdmissionDecision":
        if score is None:
            score = 1.0 if admit else 0.0
        return cls(Verdict.ADMIT if admit else Verdict.REJECT, float(score))


@dataclass(frozen=True)
class NetworkSnapshot:
    """Occupancy of one channel pool seen by an arriving call.

    ``per_class_active`` is indexed by :class:`ClassId` (three entries).
    """

    available: int
    total: int
    per_class_active: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        active = tuple(int(n) for n in self.per_class_active)
        if len(active) != len(ClassId) or min(active) < 0:
            raise InvalidParameterError(f"bad per-class active counts {self.per_class_active}")
        object.__setattr__(self, "per_class_active", active)
        used = sum(n * c.demand for n, c in zip(active, ClassId))
        if self.total < 1 or self.available != self.total - used or self.available < 0:
            raise InvalidParameterError(
                f"inconsistent snapshot: available={self.available}, total={self.total}, "
                f"active={active}"
            )

    @classmethod
    def from_active(cls, total: int, per_class_active: Sequence[int]) -> "NetworkSnapshot":
        used = sum(int(n) * c.demand for n, c in zip(per_class_active, ClassId))
        return cls(total - used, total, tuple(per_class_active))

    @property
    def utilization(self) -> float:
        return self.available / self.total


def _class_id(traffic_class) -> ClassId:
    if isinstance(traffic_class, TrafficClass):
        return traffic_class.id
    return ClassId(traffic_class)


# -- kernels shared by the Python policies and the simulation loop -------------


@njit
def threshold_admits(t1, t2, t3, available, class_idx, demand):
    if available < demand or available < t1:
        return False
    if available < t2:
        return class_idx == 0
    if available < t3:
        return class_idx <= 1
    return True


@njit
def triangular(x, a, b, c):
    if x < a or x > c:
        return 0.0
    if x == b:
        return 1.0
    if x < b:
        return (x - a) / (b - a)
    return (c - x) / (c - b)


@njit
def fuzzy_score(fz, u, d):
    """Weighted-average defuzzification of the 3x3 rule base.

    ``fz`` packs capacity sets (9), demand sets (9), rule outputs (9, row-major
    capacity x demand) and the accept threshold. Returns NaN when no rule fires.
    """
    num = 0.0
    den = 0.0
    for i in range(3):
        mc = triangular(u, fz[3 * i], fz[3 * i + 1], fz[3 * i + 2])
        if mc <= 0.0:
            continue
        for j in range(3):
            md = triangular(d, fz[9 + 3 * j], fz[9 + 3 * j + 1], fz[9 + 3 * j + 2])
            w = min(mc, md)
            num += w * fz[18 + 3 * i + j]
            den += w
    if den <= 0.0:
        return math.nan
    return num / den


@njit
def rule_decide(kind, thr, fz, available, total, class_idx, demand):
    """(admit, score) of a rule-based policy on one pool."""
    if kind == ADMIT_IF_FITS:
        ok = available >= demand
        return ok, 1.0 if ok else 0.0
    if kind == THRESHOLD:
        ok = threshold_admits(thr[0], thr[1], thr[2], available, class_idx, demand)
        return ok, 1.0 if ok else 0.0
    if kind == FUZZY:
        score = fuzzy_score(fz, available / total, demand / MAX_DEMAND_F)
        ok = score >= fz[27] - TIE_EPS and available >= demand
        return ok, score
    return False, 0.0


# -- policy objects -------------------------------------------------------------


@dataclass(frozen=True)
class KernelPolicy:
    """Flat-array form of a policy, consumed by the simulation kernel."""

    kind: int
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    fuzzy: np.ndarray = field(default_factory=lambda: np.zeros(28))
    # (recurrent_weights, centers, widths, output_weights, output_bias, cost_bias)
    network: tuple | None = None


class AdmissionPolicy:
    """Base class. Subclasses implement :meth:`decide` for a single pool."""

    name = "policy"
    stateful = False

    def decide(self, snapshot: NetworkSnapshot, traffic_class) -> AdmissionDecision:
        raise NotImplementedError

    def place(self, snapshots: Sequence[NetworkSnapshot], traffic_class) -> int:
        """Index of the first pool that admits the call, or -1."""
        for k, snap in enumerate(snapshots):
            if self.decide(snap, traffic_class).admitted:
                return k
        return -1

    def kernel(self) -> KernelPolicy:
        raise NotImplementedError(f"{type(self).__name__} has no simulation kernel")


class AdmitIfFits(AdmissionPolicy):
    """Complete sharing: admit whenever the call fits."""

    name = "admit_if_fits"

    def decide(self, snapshot, traffic_class):
        cid = _class_id(traffic_class)
        return AdmissionDecision.of(snapshot.available >= cid.demand)

    def kernel(self):
        return KernelPolicy(ADMIT_IF_FITS)


class RejectAll(AdmissionPolicy):
    name = "reject_all"

    def decide(self, snapshot, traffic_class):
        return AdmissionDecision.of(False)

    def kernel(self):
        return KernelPolicy(REJECT_ALL)


def threshold_decide(thresholds: ThresholdSet, snapshot: NetworkSnapshot,
                     traffic_class) -> AdmissionDecision:
    """Tiered rule: below t1 nothing, below t2 only type1, below t3 type1/type2."""
    cid = _class_id(traffic_class)
    ok = threshold_admits(thresholds.t1, thresholds.t2, thresholds.t3,
                          snapshot.available, int(cid), cid.demand)
    return AdmissionDecision.of(bool(ok))


class ThresholdPolicy(AdmissionPolicy):
    name = "conventional"

    def __init__(self, thresholds: ThresholdSet):
        if thresholds is None:
            raise InvalidParameterError("threshold policy needs a ThresholdSet")
        self.thresholds = thresholds

    def decide(self, snapshot, traffic_class):
        return threshold_decide(self.thresholds, snapshot, traffic_class)

    def kernel(self):
        return KernelPolicy(THRESHOLD, np.array(self.thresholds.as_tuple(), dtype=np.int64))

    def __repr__(self):
        return f"ThresholdPolicy({self.thresholds.as_tuple()})"


# -- fuzzy controller ----------------------------------------------------------

CONSEQUENTS = {"Reject": 0.0, "WeakAccept": 0.5, "StrongAccept": 1.0}
CAPACITY_TERMS = ("Low", "Medium", "High")
DEMAND_TERMS = ("Small", "Medium", "Large")

DEFAULT_SETS = ((0.0, 0.0, 0.5), (0.25, 0.5, 0.75), (0.5, 1.0, 1.0))
DEFAULT_RULES = (
    ("Reject", "Reject", "Reject"),
    ("WeakAccept", "WeakAccept", "Reject"),
    ("StrongAccept", "StrongAccept", "StrongAccept"),
)


def _check_family(sets, what):
    if len(sets) != 3:
        raise InvalidParameterError(f"{what}: exactly three membership functions required")
    for a, b, c in sets:
        if not (a <= b <= c):
            raise InvalidParameterError(f"{what}: triangle ({a}, {b}, {c}) is not ordered")
    probe = np.unique(np.concatenate([np.linspace(0.0, 1.0, 2001), np.ravel(sets)]))
    probe = probe[(probe >= 0) & (probe <= 1)]
    covered = np.zeros(probe.size, dtype=bool)
    for a, b, c in sets:
        covered |= np.array([triangular(x, a, b, c) > 0 for x in probe])
    if not covered.all():
        gap = probe[~covered][0]
        raise InvalidParameterError(f"{what}: membership family does not cover x={gap:.4f}")


@dataclass(frozen=True)
class FuzzyController:
    capacity_sets: tuple = DEFAULT_SETS
    demand_sets: tuple = DEFAULT_SETS
    rule_table: tuple = DEFAULT_RULES
    accept_threshold: float = 0.5

    def __post_init__(self):
        cap = tuple(tuple(float(v) for v in s) for s in self.capacity_sets)
        dem = tuple(tuple(float(v) for v in s) for s in self.demand_sets)
        rules = tuple(tuple(r) for r in self.rule_table)
        _check_family(cap, "capacity sets")
        _check_family(dem, "demand sets")
        if len(rules) != 3 or any(len(r) != 3 for r in rules):
            raise InvalidParameterError("rule table must be 3x3")
        for r in rules:
            for c in r:
                if c not in CONSEQUENTS:
                    raise InvalidParameterError(f"unknown consequent {c!r}")
        object.__setattr__(self, "capacity_sets", cap)
        object.__setattr__(self, "demand_sets", dem)
        object.__setattr__(self, "rule_table", rules)

    def packed(self) -> np.ndarray:
        outs = [CONSEQUENTS[c] for row in self.rule_table for c in row]
        return np.array(
            [*np.ravel(self.capacity_sets), *np.ravel(self.demand_sets), *outs,
             self.accept_threshold],
            dtype=np.float64,
        )

    def score(self, u: float, d: float) -> float:
        s = fuzzy_score(self.packed(), float(u), float(d))
        assert not math.isnan(s), "no fuzzy rule fired; membership coverage is broken"
        return s


def fuzzy_decide(controller: FuzzyController, snapshot: NetworkSnapshot,
                 traffic_class) -> AdmissionDecision:
    cid = _class_id(traffic_class)
    score = controller.score(snapshot.available / snapshot.total, cid.demand / MAX_DEMAND)
    ok = score >= controller.accept_threshold - TIE_EPS and snapshot.available >= cid.demand
    return AdmissionDecision.of(ok, score)


class FuzzyPolicy(AdmissionPolicy):
    name = "fuzzy"

    def __init__(self, controller: FuzzyController | None = None):
        self.controller = controller or FuzzyController()

    def decide(self, snapshot, traffic_class):
        return fuzzy_decide(self.controller, snapshot, traffic_class)

    def kernel(self):
        return KernelPolicy(FUZZY, fuzzy=self.controller.packed())
