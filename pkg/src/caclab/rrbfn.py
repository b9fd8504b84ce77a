"""Recurrent radial-basis-function network and the fuzzy-neural admission policy.

Architecture: a recurrent input layer (one sigmoid neuron per feature with a
self-connection), a Gaussian RBF hidden layer, and a linear output neuron whose
value is squashed by a final sigmoid into an admission score in ``[0, 1]``.

Training fits the output weights, output bias, centers and widths by mini-batch
gradient descent on squared error. Recurrent weights keep their random
initial values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import truncnorm

from ._jit import njit
from .errors import InvalidParameterError, TrainingError
from .policies import (
    FNCAC,
    AdmissionDecision,
    AdmissionPolicy,
    KernelPolicy,
    NetworkSnapshot,
    _class_id,
)
from .traffic import MAX_DEMAND, SystemConfig, make_rng

WIDTH_FLOOR = 1e-6
ADMIT_LEVEL = 0.5
PARAM_FILE_VERSION = 1


@dataclass
class RrbfnParams:
    recurrent_weights: np.ndarray  # (D,)
    centers: np.ndarray  # (H, D)
    widths: np.ndarray  # (H,)
    output_weights: np.ndarray  # (H,)
    output_bias: float = 0.0

    def __post_init__(self):
        self.recurrent_weights = np.asarray(self.recurrent_weights, dtype=np.float64)
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.widths = np.asarray(self.widths, dtype=np.float64)
        self.output_weights = np.asarray(self.output_weights, dtype=np.float64)
        self.output_bias = float(self.output_bias)
        h, d = self.centers.shape
        if self.recurrent_weights.shape != (d,):
            raise InvalidParameterError("one recurrent weight per input neuron required")
        if self.widths.shape != (h,) or self.output_weights.shape != (h,):
            raise InvalidParameterError("widths and output weights need one entry per hidden neuron")
        if np.any(np.abs(self.recurrent_weights) > 1.0):
            raise InvalidParameterError("recurrent weights must lie in [-1, 1]")
        if np.any(self.widths <= 0):
            raise InvalidParameterError("widths must be positive")
        np.maximum(self.widths, WIDTH_FLOOR, out=self.widths)

    @property
    def input_width(self) -> int:
        return self.centers.shape[1]

    @property
    def hidden_width(self) -> int:
        return self.centers.shape[0]

    def copy(self) -> "RrbfnParams":
        return RrbfnParams(self.recurrent_weights.copy(), self.centers.copy(), self.widths.copy(),
                           self.output_weights.copy(), self.output_bias)

    def equals(self, other: "RrbfnParams") -> bool:
        return (
            np.array_equal(self.recurrent_weights, other.recurrent_weights)
            and np.array_equal(self.centers, other.centers)
            and np.array_equal(self.widths, other.widths)
            and np.array_equal(self.output_weights, other.output_weights)
            and self.output_bias == other.output_bias
        )


@dataclass
class RrbfnState:
    previous_activations: np.ndarray

    @classmethod
    def zeros(cls, width: int) -> "RrbfnState":
        return cls(np.zeros(width))


@dataclass(frozen=True)
class RrbfnGradient:
    output_weights: np.ndarray
    output_bias: float
    centers: np.ndarray
    widths: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.output_weights, [self.output_bias],
                               self.centers.ravel(), self.widths])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))


# -- features ------------------------------------------------------------------


@dataclass(frozen=True)
class FncacFeatures:
    """Network input: per-RAT free capacity, call demand, QoS one-hot, cost bias."""

    per_rat_available: tuple[float, ...]
    demand: float
    qos_class: tuple[float, float, float]
    cost_bias: float

    def __post_init__(self):
        vals = (*self.per_rat_available, self.demand)
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise InvalidParameterError("capacity and demand features must lie in [0, 1]")

    def vector(self) -> np.ndarray:
        return np.array([*self.per_rat_available, self.demand, *self.qos_class, self.cost_bias])


def feature_width(n_rats: int) -> int:
    return n_rats + 5


def build_features(snapshots: Sequence[NetworkSnapshot], traffic_class,
                   cost_bias: float) -> FncacFeatures:
    cid = _class_id(traffic_class)
    onehot = [0.0, 0.0, 0.0]
    onehot[int(cid)] = 1.0
    return FncacFeatures(
        tuple(s.available / s.total for s in snapshots),
        cid.demand / MAX_DEMAND,
        tuple(onehot),
        float(cost_bias),
    )


@njit
def fill_features(out, avail, caps, demand, class_idx, cost_bias):
    k = caps.shape[0]
    for r in range(k):
        out[r] = avail[r] / caps[r]
    out[k] = demand / 3.0
    for c in range(3):
        out[k + 1 + c] = 1.0 if c == class_idx else 0.0
    out[k + 4] = cost_bias


# -- forward pass --------------------------------------------------------------


def sigmoid(x):
    return expit(x)


def recurrent_input(features, state: RrbfnState, params: RrbfnParams):
    """Input layer: ``sigmoid(x_j + r_j * previous_j)``; returns activations and the new state."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (params.input_width,) or state.previous_activations.shape != x.shape:
        raise InvalidParameterError(
            f"expected {params.input_width} features, got {x.shape[0] if x.ndim else 1}"
        )
    act = sigmoid(x + params.recurrent_weights * state.previous_activations)
    return act, RrbfnState(act.copy())


def rbf_forward(activations, params: RrbfnParams) -> float:
    """Linear output ``bias + sum_i w_i exp(-||y - c_i||^2 / sigma_i)``."""
    y = np.asarray(activations, dtype=np.float64)
    if y.shape != (params.input_width,):
        raise InvalidParameterError("activation vector has the wrong length")
    d2 = ((y[None, :] - params.centers) ** 2).sum(axis=1)
    return float(params.output_bias + params.output_weights @ np.exp(-d2 / params.widths))


def forward(features, state: RrbfnState, params: RrbfnParams):
    """Admission score in ``[0, 1]`` and the next recurrent state."""
    act, nxt = recurrent_input(features, state, params)
    return float(sigmoid(rbf_forward(act, params))), nxt


@njit
def forward_step(x, state, rec_w, centers, widths, out_w, out_b):
    """Single-sample forward used inside the simulation loop; updates ``state`` in place."""
    d = x.shape[0]
    for j in range(d):
        state[j] = 1.0 / (1.0 + math.exp(-(x[j] + rec_w[j] * state[j])))
    z = out_b
    for i in range(centers.shape[0]):
        d2 = 0.0
        for j in range(d):
            diff = state[j] - centers[i, j]
            d2 += diff * diff
        z += out_w[i] * math.exp(-d2 / widths[i])
    return 1.0 / (1.0 + math.exp(-z))


def warm_state(params: RrbfnParams, history: np.ndarray | None, n: int) -> np.ndarray:
    """Input-layer state after replaying each sample's history from a reset state."""
    prev = np.zeros((n, params.input_width))
    if history is not None:
        for k in range(history.shape[1]):
            prev = sigmoid(history[:, k, :] + params.recurrent_weights * prev)
    return prev


def _batch_pass(params: RrbfnParams, x: np.ndarray, history: np.ndarray | None = None):
    """Forward over a batch, state reset per sample; returns intermediates for the gradient."""
    y = sigmoid(x + params.recurrent_weights * warm_state(params, history, x.shape[0]))
    diff = y[:, None, :] - params.centers[None, :, :]
    d2 = (diff ** 2).sum(axis=2)
    phi = np.exp(-d2 / params.widths)
    out = sigmoid(params.output_bias + phi @ params.output_weights)
    return y, d2, phi, out


# -- data ------------------------------------------------------------------------


@dataclass
class TrainingSet:
    """Labelled requests.

    ``history`` optionally holds, per sample, the feature vectors of the requests
    the controller saw just before this one, oldest first, shape ``(n, K, D)``.
    Forward passes start each sample from a reset state and replay its history.
    """

    features: np.ndarray  # (n, D)
    labels: np.ndarray  # (n,)
    classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    history: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidParameterError("features and labels differ in length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InvalidParameterError("labels must be 0 or 1")
        if self.history is not None:
            self.history = np.asarray(self.history, dtype=np.float64)
            n, d = self.features.shape
            if self.history.ndim != 3 or self.history.shape[0] != n or self.history.shape[2] != d:
                raise InvalidParameterError("history must have shape (n, K, D)")

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "TrainingSet":
        classes = self.classes[idx] if self.classes.size else self.classes
        history = None if self.history is None else self.history[idx]
        return TrainingSet(self.features[idx], self.labels[idx], classes, history)


def _arrays(batch):
    if isinstance(batch, TrainingSet):
        x, y, hist = batch.features, batch.labels, batch.history
    else:
        x, y, *rest = batch
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).ravel()
        hist = np.asarray(rest[0], dtype=np.float64) if rest and rest[0] is not None else None
    if y.size == 0:
        raise InvalidParameterError("empty batch")
    return x, y, hist


def loss(params: RrbfnParams, batch) -> float:
    """Mean squared error of the squashed output, state reset per sample."""
    x, y, hist = _arrays(batch)
    out = _batch_pass(params, x, hist)[3]
    return float(np.mean((out - y) ** 2))


def gradient(params: RrbfnParams, batch) -> RrbfnGradient:
    x, y, hist = _arrays(batch)
    act, d2, phi, out = _batch_pass(params, x, hist)
    dz = 2.0 * (out - y) / y.size * out * (1.0 - out)  # (B,)
    g_w = phi.T @ dz
    g_b = float(dz.sum())
    dphi = dz[:, None] * params.output_weights[None, :]  # (B, H)
    common = dphi * phi  # (B, H)
    g_sigma = (common * d2).sum(axis=0) / params.widths ** 2
    dd2 = -common / params.widths  # dL/d(d2)
    g_centers = -2.0 * (dd2.T @ act - dd2.sum(axis=0)[:, None] * params.centers)
    return RrbfnGradient(g_w, g_b, g_centers, g_sigma)


def predict(params: RrbfnParams, features: np.ndarray, history: np.ndarray | None = None):
    return _batch_pass(params, np.atleast_2d(features), history)[3]


def accuracy(params: RrbfnParams, data: TrainingSet) -> float:
    scores = predict(params, data.features, data.history)
    return float(np.mean((scores >= ADMIT_LEVEL) == (data.labels == 1)))


# -- initialisation and training ----------------------------------------------


def init_params(data: TrainingSet, hidden_width: int, seed: int,
                recurrent_std: float = 0.5) -> RrbfnParams:
    """Centers at randomly drawn training samples, shared width = mean pairwise center distance."""
    if hidden_width < 1:
        raise InvalidParameterError("hidden_width must be positive")
    rng = make_rng([seed, 1])
    d = data.features.shape[1]
    pick = rng.choice(data.size, size=hidden_width, replace=hidden_width > data.size)
    rec = truncnorm.rvs(-1.0 / recurrent_std, 1.0 / recurrent_std, scale=recurrent_std,
                        size=d, random_state=rng)
    hist = None if data.history is None else data.history[pick]
    warm = warm_state(RrbfnParams(rec, np.zeros((1, d)), [1.0], [0.0]), hist, pick.size)
    centers = sigmoid(data.features[pick] + rec * warm)
    if hidden_width > 1:
        gaps = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))
        width = gaps[np.triu_indices(hidden_width, k=1)].mean()
    else:
        width = 1.0
    width = width if width > WIDTH_FLOOR else 1.0
    out_w = rng.normal(0.0, 0.1, size=hidden_width)
    return RrbfnParams(rec, centers, np.full(hidden_width, width), out_w, 0.0)


def split_indices(n: int, seed: int, test_fraction: float = 0.2):
    perm = make_rng([seed, 0]).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


@dataclass
class TrainingResult:
    params: RrbfnParams
    best_epoch: int
    train_loss: list[float]
    test_loss: list[float]
    best_test_loss: list[float]
    test_accuracy: float
    train_idx: np.ndarray
    test_idx: np.ndarray


def fit(params: RrbfnParams, data: TrainingSet, epochs: int, learning_rate: float, seed: int,
        batch_size: int = 32, test_fraction: float = 0.2) -> TrainingResult:
    """Mini-batch gradient descent keeping the parameters with the best held-out loss."""
    if not learning_rate > 0:
        raise InvalidParameterError("learning_rate must be positive")
    if epochs < 0:
        raise InvalidParameterError("epochs must be non-negative")
    train_idx, test_idx = split_indices(data.size, seed, test_fraction)
    train_set, test_set = data.subset(train_idx), data.subset(test_idx)
    if test_set.size == 0:
        test_set = train_set
    if not (np.any(train_set.labels == 0) and np.any(train_set.labels == 1)):
        raise InvalidParameterError("training split needs both admit and reject labels")

    rng = make_rng([seed, 2])
    current = params.copy()
    best = params.copy()
    best_loss = loss(best, test_set)
    best_epoch = 0
    history_train = [loss(current, train_set)]
    history_test = [best_loss]
    history_best = [best_loss]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(train_set.size)
        for start in range(0, order.size, batch_size):
            idx = order[start:start + batch_size]
            hist = None if train_set.history is None else train_set.history[idx]
            g = gradient(current, (train_set.features[idx], train_set.labels[idx], hist))
            current.output_weights -= learning_rate * g.output_weights
            current.output_bias -= learning_rate * g.output_bias
            current.centers -= learning_rate * g.centers
            current.widths -= learning_rate * g.widths
            np.maximum(current.widths, WIDTH_FLOOR, out=current.widths)
        test_loss = loss(current, test_set)
        if not math.isfinite(test_loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}", epoch=epoch)
        history_train.append(loss(current, train_set))
        history_test.append(test_loss)
        if test_loss < best_loss:
            best_loss, best, best_epoch = test_loss, current.copy(), epoch
        history_best.append(best_loss)
    return TrainingResult(best, best_epoch, history_train, history_test, history_best,
                          accuracy(best, test_set), train_idx, test_idx)


def train(params: RrbfnParams, data: TrainingSet, epochs: int, learning_rate: float,
          seed: int, batch_size: int = 32) -> RrbfnParams:
    return fit(params, data, epochs, learning_rate, seed, batch_size).params


# -- admission policy ------------------------------------------------------------


def fncac_decide(params: RrbfnParams, state: RrbfnState, snapshots: Sequence[NetworkSnapshot],
                 traffic_class, cost_bias: float):
    """Score the request; admit iff score >= 0.5 and some RAT can hold the call."""
    if not snapshots:
        raise InvalidParameterError("at least one RAT snapshot is required")
    cid = _class_id(traffic_class)
    feats = build_features(snapshots, cid, cost_bias)
    score, nxt = forward(feats.vector(), state, params)
    feasible = any(s.available >= cid.demand for s in snapshots)
    return AdmissionDecision.of(score >= ADMIT_LEVEL and feasible, score), nxt


class FncacPolicy(AdmissionPolicy):
    """Stateful wrapper: carries the recurrent state from one decision to the next."""

    name = "fncac"
    stateful = True

    def __init__(self, params: RrbfnParams, cost_bias: float = 1.0):
        self.params = params
        self.cost_bias = float(cost_bias)
        self.state = RrbfnState.zeros(params.input_width)

    def reset(self):
        self.state = RrbfnState.zeros(self.params.input_width)

    def decide(self, snapshot, traffic_class):
        decision, self.state = fncac_decide(self.params, self.state, [snapshot], traffic_class,
                                            self.cost_bias)
        return decision

    def place(self, snapshots, traffic_class):
        decision, self.state = fncac_decide(self.params, self.state, snapshots, traffic_class,
                                            self.cost_bias)
        if not decision.admitted:
            return -1
        demand = _class_id(traffic_class).demand
        return next(k for k, s in enumerate(snapshots) if s.available >= demand)

    def kernel(self):
        p = self.params
        network = (p.recurrent_weights, p.centers, p.widths, p.output_weights,
                   p.output_bias, self.cost_bias)
        return KernelPolicy(FNCAC, network=network)


# -- training data -------------------------------------------------------------


def _random_snapshot(rng: np.random.Generator, capacity: int, class_ids) -> NetworkSnapshot:
    target = int(rng.integers(0, capacity + 1))
    active = [0, 0, 0]
    used = 0
    demands = sorted(c.demand for c in class_ids)
    while True:
        fits = [c for c in class_ids if used + c.demand <= target]
        if not fits:
            break
        c = fits[int(rng.integers(len(fits)))]
        active[int(c)] += 1
        used += c.demand
        if target - used < demands[0]:
            break
    return NetworkSnapshot.from_active(capacity, active)


def generate_training_set(config: SystemConfig, teacher: AdmissionPolicy, size: int = 1000,
                          seed: int = 0, cost_bias: float = 1.0,
                          history_length: int = 4) -> TrainingSet:
    """Label random occupancy snapshots with the teacher's admit/reject verdict.

    Each sample also records ``history_length`` earlier requests of random class
    arriving at the same snapshot, so training sees the recurrent input layer in
    the warmed-up condition it is in during a simulation.
    """
    if size < 10:
        raise InvalidParameterError("training set size must be at least 10")
    rng = make_rng([seed, 3])
    class_ids = [c.id for c in config.classes]
    width = feature_width(len(config.rats))
    feats = np.empty((size, width))
    history = np.empty((size, history_length, width))
    labels = np.empty(size)
    classes = np.empty(size, dtype=np.int64)
    for n in range(size):
        snaps = [_random_snapshot(rng, cap, class_ids) for cap in config.rats]
        cid = class_ids[int(rng.integers(len(class_ids)))]
        feats[n] = build_features(snaps, cid, cost_bias).vector()
        for k in range(history_length):
            earlier = class_ids[int(rng.integers(len(class_ids)))]
            history[n, k] = build_features(snaps, earlier, cost_bias).vector()
        labels[n] = 1.0 if teacher.place(snaps, cid) >= 0 else 0.0
        classes[n] = int(cid)
    return TrainingSet(feats, labels, classes, history if history_length else None)


# -- persistence -------------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def save_params(params: RrbfnParams, path, metadata: Sequence[str] = ()) -> Path:
    """Flat text file: comment block, size header, one line per parameter group."""
    path = Path(path)
    lines = [f"# {m}" for m in metadata]
    lines.append(f"rrbfn-params v{PARAM_FILE_VERSION} input_width={params.input_width} "
                 f"hidden_width={params.hidden_width}")
    lines.append(f"recurrent_weights {_fmt(params.recurrent_weights)}")
    lines.append(f"centers {_fmt(params.centers)}")
    lines.append(f"widths {_fmt(params.widths)}")
    lines.append(f"output_weights {_fmt(params.output_weights)}")
    lines.append(f"output_bias {_fmt([params.output_bias])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def load_params(path) -> RrbfnParams:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("rrbfn-params "):
        raise InvalidParameterError(f"{path}: not an RRBFN parameter file")
    head = lines[0].split()
    if head[1] != f"v{PARAM_FILE_VERSION}":
        raise InvalidParameterError(f"{path}: unsupported version {head[1]}")
    sizes = dict(tok.split("=") for tok in head[2:])
    d, h = int(sizes["input_width"]), int(sizes["hidden_width"])
    groups = {}
    for ln in lines[1:]:
        name, *vals = ln.split()
        groups[name] = np.array([float(v) for v in vals])
    try:
        return RrbfnParams(groups["recurrent_weights"], groups["centers"].reshape(h, d),
                           groups["widths"], groups["output_weights"],
                           float(groups["output_bias"][0]))
    except (KeyError, ValueError) as exc:
        raise InvalidParameterError(f"{path}: malformed parameter file ({exc})") from exc


__all__ = [
    "FncacFeatures", "FncacPolicy", "RrbfnGradient", "RrbfnParams", "RrbfnState",
    "TrainingResult", "TrainingSet", "accuracy", "build_features", "fit", "fncac_decide",
    "forward", "generate_training_set", "gradient", "init_params", "load_params", "loss",
    "predict", "rbf_forward", "recurrent_input", "save_params", "split_indices",
    "train", "warm_state",
]
