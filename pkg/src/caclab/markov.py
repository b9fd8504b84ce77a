"""Analytical blocking probabilities.

Three routes, usable as cross-checks of one another:

* the reduced three-term recurrence of the symmetric threshold model,
* the Erlang-B formula for a single-class M/M/N/N loss system,
* the exact continuous-time Markov chain over occupancy vectors, for any
  stateless admission policy and any partition of the pool into RATs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameterError, NumericalError, ResourceLimitError
from .policies import AdmissionPolicy, NetworkSnapshot
from .traffic import ClassId, SystemConfig, UtilizationRate

DEFAULT_MAX_STATES = 200_000
DENSE_LIMIT = 3000
_RESCALE = 1e200


@dataclass(frozen=True)
class RecurrenceSolution:
    """Occupancy distribution ``P_0 .. P_N`` of the reduced model.

    ``unnormalized`` holds the raw forward recurrence seeded with 1; it is only
    rescaled (by a common factor) if the raw values would overflow.
    """

    probabilities: np.ndarray
    unnormalized: np.ndarray
    utilization: UtilizationRate
    rescaled: bool = False

    @property
    def n(self) -> int:
        return self.probabilities.size - 1


@dataclass(frozen=True)
class BlockingReport:
    type1_blocking: float | None
    type2_blocking: float | None
    type3_blocking: float | None
    aggregate_blocking: float

    def __post_init__(self):
        for v in (*self.per_class().values(), self.aggregate_blocking):
            if not (-1e-12 <= v <= 1 + 1e-12):
                raise NumericalError(f"blocking probability {v} outside [0, 1]")

    def per_class(self) -> dict[ClassId, float]:
        vals = (self.type1_blocking, self.type2_blocking, self.type3_blocking)
        return {c: v for c, v in zip(ClassId, vals) if v is not None}

    def for_class(self, class_id: ClassId) -> float | None:
        return (self.type1_blocking, self.type2_blocking, self.type3_blocking)[int(class_id)]


def solve_recurrence(a: float | UtilizationRate, n: int) -> RecurrenceSolution:
    """Forward recurrence ``P_k = (a/3)(P_{k-1} + P_{k-2} + P_{k-3})``, ``P_0 = 1``, normalized."""
    a = UtilizationRate(float(a))
    if n < 3:
        raise InvalidParameterError(f"recurrence needs n >= 3 channels, got {n}")
    step = a.value / 3.0
    p = np.zeros(n + 1)
    p[0] = 1.0
    rescaled = False
    for k in range(1, n + 1):
        p[k] = step * p[max(k - 3, 0):k].sum()
        if p[k] > _RESCALE:
            p[: k + 1] /= p[k]
            rescaled = True
    return RecurrenceSolution(p / p.sum(), p, a, rescaled)


def blocking_from_recurrence(sol: RecurrenceSolution, n: int | None = None) -> BlockingReport:
    """Type-i blocking read off the tail of the distribution; aggregate is one more recurrence step."""
    n = sol.n if n is None else n
    if n != sol.n:
        raise InvalidParameterError(f"solution was computed for n={sol.n}, not n={n}")
    p = sol.probabilities
    b1, b2, b3 = p[n], p[n - 1], p[n - 2]
    aggregate = sol.utilization.value / 3.0 * (b1 + b2 + b3)
    return BlockingReport(float(b1), float(b2), float(b3), float(aggregate))


def erlang_b(n: int, a: float) -> float:
    """Blocking of M/M/n/n at offered load ``a`` via the stable recursion."""
    if n < 0 or a < 0:
        raise InvalidParameterError("erlang_b needs n >= 0 and a >= 0")
    b = 1.0
    for k in range(1, n + 1):
        b = a * b / (k + a * b)
    return b


@dataclass(frozen=True)
class CtmcModel:
    """Occupancy chain. ``states[s]`` is a ``(rats, classes)`` count matrix, flattened."""

    config: SystemConfig
    states: np.ndarray  # (S, K*C) int64
    generator: sp.csr_matrix
    admits: np.ndarray  # (S, C) bool: would an arrival of class i be admitted in state s
    policy_name: str = ""

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def occupancy(self) -> np.ndarray:
        """Busy channels per state, summed over pools."""
        k, c = len(self.config.rats), len(self.config.classes)
        counts = self.states.reshape(-1, k, c)
        return (counts * self.config.demands).sum(axis=(1, 2))


def _snapshots(counts: np.ndarray, config: SystemConfig) -> list[NetworkSnapshot]:
    snaps = []
    for k, cap in enumerate(config.rats):
        active = [0, 0, 0]
        for i, cls in enumerate(config.classes):
            active[int(cls.id)] = int(counts[k, i])
        snaps.append(NetworkSnapshot.from_active(cap, active))
    return snaps


def build_ctmc(config: SystemConfig, policy: AdmissionPolicy,
               max_states: int = DEFAULT_MAX_STATES) -> CtmcModel:
    """Enumerate every occupancy reachable from the empty system under ``policy``."""
    if policy.stateful:
        raise InvalidParameterError(f"policy {policy.name!r} keeps state; its chain is not Markov")
    n_rats, n_cls = len(config.rats), len(config.classes)
    lam = config.arrival_rates
    mu = config.service_rates
    demands = config.demands

    start = (0,) * (n_rats * n_cls)
    index = {start: 0}
    order = [start]
    admits = []
    rows, cols, vals = [], [], []
    queue = deque([start])
    while queue:
        state = queue.popleft()
        s = index[state]
        counts = np.array(state, dtype=np.int64).reshape(n_rats, n_cls)
        snaps = _snapshots(counts, config)
        row_admit = np.zeros(n_cls, dtype=bool)
        targets = []
        for i, cls in enumerate(config.classes):
            k = policy.place(snaps, cls)
            if k < 0:
                continue
            if snaps[k].available < demands[i]:
                raise InvalidParameterError(
                    f"policy {policy.name!r} admitted an infeasible {cls.id.label} call"
                )
            row_admit[i] = True
            if lam[i] > 0:
                nxt = counts.copy()
                nxt[k, i] += 1
                targets.append((tuple(nxt.ravel()), lam[i]))
        for k in range(n_rats):
            for i in range(n_cls):
                if counts[k, i] > 0:
                    nxt = counts.copy()
                    nxt[k, i] -= 1
                    targets.append((tuple(nxt.ravel()), counts[k, i] * mu[i]))
        admits.append(row_admit)
        for target, rate in targets:
            t = index.get(target)
            if t is None:
                if len(index) >= max_states:
                    raise ResourceLimitError(
                        f"CTMC state space exceeds the cap of {max_states} states"
                    )
                t = index[target] = len(order)
                order.append(target)
                queue.append(target)
            rows.append(s)
            cols.append(t)
            vals.append(rate)

    size = len(order)
    off = sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    out_rate = np.asarray(off.sum(axis=1)).ravel()
    generator = (off - sp.diags(out_rate)).tocsr()
    states = np.array(order, dtype=np.int64).reshape(size, n_rats * n_cls)
    return CtmcModel(config, states, generator, np.array(admits), policy.name)


def ctmc_steady_state(model: CtmcModel) -> np.ndarray:
    """Solve ``pi Q = 0``, ``sum(pi) = 1`` with the last balance equation replaced by normalization."""
    q = model.generator
    size = model.size
    if size == 1:
        return np.ones(1)
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    try:
        if size <= DENSE_LIMIT:
            a = q.T.toarray()
            a[-1, :] = 1.0
            pi = scipy.linalg.solve(a, rhs)
        else:
            a = q.T.tolil()
            a[-1, :] = np.ones(size)
            pi = spla.spsolve(a.tocsc(), rhs)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise NumericalError(f"stationary solve failed: {exc}") from exc
    if not np.all(np.isfinite(pi)) or pi.min() < -1e-10:
        raise NumericalError("stationary solve returned an invalid vector")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = np.abs(q.T @ pi).max()
    if residual >= 1e-8:
        raise NumericalError(f"stationary residual {residual:.3e} exceeds 1e-8")
    return pi


def ctmc_blocking(model: CtmcModel, stationary: np.ndarray) -> BlockingReport:
    """Per-class blocking by PASTA; aggregate weighted by arrival rates."""
    per = np.empty(len(model.config.classes))
    for i in range(per.size):
        per[i] = float(stationary[~model.admits[:, i]].sum())
    lam = model.config.arrival_rates
    total = lam.sum()
    if total > 0:
        aggregate = float(lam @ per / total)
    else:
        aggregate = float(per.mean())
    vals: list[float | None] = [None, None, None]
    for i, cls in enumerate(model.config.classes):
        vals[int(cls.id)] = float(min(per[i], 1.0))
    return BlockingReport(*vals, min(aggregate, 1.0))


def analyze(config: SystemConfig, policy: AdmissionPolicy,
            max_states: int = DEFAULT_MAX_STATES) -> BlockingReport:
    """Build, solve and read blocking in one call."""
    model = build_ctmc(config, policy, max_states)
    return ctmc_blocking(model, ctmc_steady_state(model))
