"""Traffic classes, cell-pool configuration and call-generation primitives."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError


class ClassId(enum.IntEnum):
    """QoS class. The integer value is the class index used in arrays."""

    TYPE1 = 0  # conversational / voice
    TYPE2 = 1  # interactive / web
    TYPE3 = 2  # background

    @property
    def demand(self) -> int:
        return int(self) + 1

    @property
    def label(self) -> str:
        return f"type{int(self) + 1}"


MAX_DEMAND = 3


@dataclass(frozen=True)
class TrafficClass:
    id: ClassId
    arrival_rate: float
    service_rate: float
    channels_required: int = -1

    def __post_init__(self):
        object.__setattr__(self, "id", ClassId(self.id))
        if self.channels_required == -1:
            object.__setattr__(self, "channels_required", self.id.demand)
        if self.channels_required != self.id.demand:
            raise InvalidParameterError(
                f"{self.id.label} requires {self.id.demand} channels, got {self.channels_required}"
            )
        # zero arrival rate is allowed: single-class experiments silence the other classes
        if not self.arrival_rate >= 0:
            raise InvalidParameterError(f"arrival_rate must be >= 0, got {self.arrival_rate}")
        if not self.service_rate > 0:
            raise InvalidParameterError(f"service_rate must be > 0, got {self.service_rate}")

    @property
    def utilization(self) -> float:
        return utilization_rate(self.arrival_rate, self.service_rate)


@dataclass(frozen=True)
class ThresholdSet:
    """Channel-count thresholds of the tiered admission rule, ``t1 < t2 < t3``."""

    t1: int
    t2: int
    t3: int

    def __post_init__(self):
        if not (0 <= self.t1 < self.t2 < self.t3):
            raise InvalidParameterError(
                f"thresholds must satisfy 0 <= t1 < t2 < t3, got {self.as_tuple()}"
            )

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.t1, self.t2, self.t3)

    @classmethod
    def default_for(cls, channels: int) -> "ThresholdSet":
        """Tiers at 1/5, 2/5 and 3/5 of a pool of ``channels`` (needs ``channels >= 2``)."""
        t = [int(round(channels * k / 5)) for k in (1, 2, 3)]
        t[1] = max(t[1], t[0] + 1)
        t[2] = max(t[2], t[1] + 1)
        shift = max(0, t[2] - channels)
        return cls(*(max(0, x - shift) if i == 0 else x - shift for i, x in enumerate(t)))


@dataclass(frozen=True)
class UtilizationRate:
    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise InvalidParameterError(f"utilization must be >= 0, got {self.value}")

    @property
    def stable(self) -> bool:
        return self.value < 1.0

    def __float__(self) -> float:
        return float(self.value)


def canonical_classes(arrival_rate: float, service_rate: float) -> tuple[TrafficClass, ...]:
    """Symmetric mode: every class shares one arrival and one service rate."""
    return tuple(TrafficClass(c, arrival_rate, service_rate) for c in ClassId)


@dataclass(frozen=True)
class SystemConfig:
    """A pool of ``total_channels`` virtual channels shared by the traffic classes.

    ``rats`` partitions the pool into per-RAT sub-pools; the default is a single
    jointly managed pool. Thresholds are expressed in channels of one RAT pool.
    """

    total_channels: int
    classes: tuple[TrafficClass, ...]
    thresholds: ThresholdSet | None = None
    rng_seed: int = 0
    rats: tuple[int, ...] = ()

    def __post_init__(self):
        if self.total_channels < 1:
            raise InvalidParameterError("total_channels must be positive")
        classes = tuple(self.classes)
        if not classes:
            raise InvalidParameterError("at least one traffic class is required")
        ids = [c.id for c in classes]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError("traffic class ids must be unique")
        object.__setattr__(self, "classes", classes)
        if max(c.channels_required for c in classes) > self.total_channels:
            raise InvalidParameterError("total_channels is smaller than the largest class demand")
        rats = tuple(int(r) for r in self.rats) or (self.total_channels,)
        if any(r < 1 for r in rats) or sum(rats) != self.total_channels:
            raise InvalidParameterError(
                f"RAT pool sizes {rats} must be positive and sum to {self.total_channels}"
            )
        object.__setattr__(self, "rats", rats)
        if self.thresholds is None and min(rats) >= 2:
            object.__setattr__(self, "thresholds", ThresholdSet.default_for(min(rats)))
        if self.thresholds is not None and self.thresholds.t3 > min(rats):
            raise InvalidParameterError(
                f"threshold t3={self.thresholds.t3} exceeds the smallest pool ({min(rats)} channels)"
            )
        if self.rng_seed < 0:
            raise InvalidParameterError("rng_seed must be unsigned")

    @property
    def demands(self) -> np.ndarray:
        return np.array([c.channels_required for c in self.classes], dtype=np.int64)

    @property
    def arrival_rates(self) -> np.ndarray:
        return np.array([c.arrival_rate for c in self.classes], dtype=np.float64)

    @property
    def service_rates(self) -> np.ndarray:
        return np.array([c.service_rate for c in self.classes], dtype=np.float64)

    def with_utilization(self, a: float) -> "SystemConfig":
        """Set every class's arrival rate to ``a * service_rate``."""
        classes = tuple(replace(c, arrival_rate=a * c.service_rate) for c in self.classes)
        return replace(self, classes=classes)

    def only(self, class_id: ClassId) -> "SystemConfig":
        """Silence every class but ``class_id``."""
        classes = tuple(
            c if c.id == class_id else replace(c, arrival_rate=0.0) for c in self.classes
        )
        return replace(self, classes=classes)


def utilization_rate(arrival_rate: float, service_rate: float) -> UtilizationRate:
    if not service_rate > 0:
        raise InvalidParameterError(f"service_rate must be > 0, got {service_rate}")
    return UtilizationRate(arrival_rate / service_rate)


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """PCG64 stream seeded explicitly; the same seed always yields the same sequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _exponential(rng: np.random.Generator, rate: float, size=None):
    if not rate > 0:
        raise InvalidParameterError(f"rate must be > 0, got {rate}")
    return rng.exponential(1.0 / rate, size=size)


def sample_interarrival(rng: np.random.Generator, arrival_rate: float, size=None):
    """Poisson-process gap: exponential with mean ``1 / arrival_rate``."""
    return _exponential(rng, arrival_rate, size)


def sample_service_time(rng: np.random.Generator, service_rate: float, size=None):
    """Holding time: exponential with mean ``1 / service_rate``."""
    return _exponential(rng, service_rate, size)


def arrival_times(rng: np.random.Generator, arrival_rate: float, horizon: float,
                  chunk: int | None = None) -> np.ndarray:
    """All arrival epochs of a Poisson stream falling in ``[0, horizon]``."""
    if arrival_rate == 0:
        return np.empty(0)
    if chunk is None:
        mean = arrival_rate * horizon
        chunk = int(mean + 6.0 * np.sqrt(mean) + 64)
    parts = []
    t = 0.0
    while t <= horizon:
        gaps = sample_interarrival(rng, arrival_rate, size=chunk)
        times = t + np.cumsum(gaps)
        parts.append(times)
        t = times[-1]
    times = np.concatenate(parts)
    return times[: np.searchsorted(times, horizon, side="right")]


@dataclass
class CallStreams:
    """Pre-drawn arrival epochs and holding times, one row per traffic class.

    Every arrival carries a holding time whether or not it is admitted, so two
    policies run with the same seed see identical offered traffic.
    """

    arrivals: np.ndarray  # (C, M), padded with +inf
    holding: np.ndarray  # (C, M)
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def draw_call_streams(config: SystemConfig, horizon: float, seed) -> CallStreams:
    root = np.random.SeedSequence(seed)
    children = root.spawn(2 * len(config.classes))
    times, holds = [], []
    for i, cls in enumerate(config.classes):
        arr_rng = np.random.Generator(np.random.PCG64(children[2 * i]))
        svc_rng = np.random.Generator(np.random.PCG64(children[2 * i + 1]))
        t = arrival_times(arr_rng, cls.arrival_rate, horizon)
        times.append(t)
        holds.append(sample_service_time(svc_rng, cls.service_rate, size=t.size))
    width = max(1, max(t.size for t in times))
    arrivals = np.full((len(times), width), np.inf)
    holding = np.zeros((len(times), width))
    for i, (t, h) in enumerate(zip(times, holds)):
        arrivals[i, : t.size] = t
        holding[i, : t.size] = h
    counts = np.array([t.size for t in times], dtype=np.int64)
    return CallStreams(arrivals, holding, counts)
