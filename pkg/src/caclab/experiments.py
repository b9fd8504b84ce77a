"""Experiment drivers behind the command line: sweeps, training, CSV emission."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, emit_config
from .errors import ConfigError, InvalidParameterError, ResourceLimitError
from .markov import analyze, blocking_from_recurrence, solve_recurrence
from .policies import AdmissionPolicy, AdmitIfFits, FuzzyPolicy, ThresholdPolicy
from .rrbfn import (
    FncacPolicy,
    RrbfnParams,
    TrainingResult,
    fit,
    generate_training_set,
    init_params,
    load_params,
    save_params,
    split_indices,
)
from .simengine import SimReport, horizon_for_arrivals, pool_reports, run
from .traffic import ClassId, SystemConfig

CLASS_SCOPES = ("aggregate", "type1", "type2", "type3")
CSV_COLUMNS = ("utilization", "policy", "class_scope", "analytical", "ctmc", "empirical",
               "half_width", "seed")
FIGURE_FILES = {
    "fig4": "fig4_aggregate.csv",
    "fig5": "fig5_fncac_classes.csv",
    "fig6": "fig6_type1_only.csv",
    "fig7": "fig7_type2_only.csv",
    "fig8": "fig8_type3_only.csv",
}
PARAMS_FILE = "fncac_params.txt"


@dataclass(frozen=True)
class SweepRow:
    utilization: float
    policy: str
    class_scope: str
    analytical: float | None
    ctmc: float | None
    empirical: float | None
    half_width: float | None
    seed: int

    def key(self):
        return (self.policy, self.class_scope, self.utilization)


# -- policies and training ---------------------------------------------------------


def teacher_policy(cfg: ExperimentConfig) -> AdmissionPolicy:
    name = cfg.rrbfn.teacher
    if name == "fuzzy":
        return FuzzyPolicy(cfg.fuzzy)
    if name == "admit_if_fits":
        return AdmitIfFits()
    return conventional_policy(cfg.system)


def conventional_policy(system: SystemConfig) -> ThresholdPolicy:
    if system.thresholds is None:
        raise ConfigError("conventional CAC needs thresholds for pools this small",
                          key="system.thresholds")
    return ThresholdPolicy(system.thresholds)


def train_fncac(cfg: ExperimentConfig) -> TrainingResult:
    """Label a fresh training set with the teacher and fit the network to it."""
    r = cfg.rrbfn
    data = generate_training_set(cfg.system, teacher_policy(cfg), r.training_size, cfg.seed,
                                 r.cost_bias, r.history_length)
    train_idx, _ = split_indices(data.size, cfg.seed)
    params = init_params(data.subset(train_idx), r.hidden_width, cfg.seed, r.recurrent_std)
    return fit(params, data, r.epochs, r.learning_rate, cfg.seed, r.batch_size)


def fncac_params(cfg: ExperimentConfig) -> tuple[RrbfnParams, dict]:
    """Parameters from the configured file, or trained now; plus provenance for metadata."""
    if cfg.rrbfn.params_file:
        params = load_params(cfg.rrbfn.params_file)
        return params, {"fncac_params": cfg.rrbfn.params_file}
    res = train_fncac(cfg)
    return res.params, {
        "fncac_params": "trained in-process",
        "fncac_heldout_accuracy": f"{res.test_accuracy:.6f}",
        "fncac_best_epoch": str(res.best_epoch),
    }


def build_policies(cfg: ExperimentConfig, names: Sequence[str], params: RrbfnParams | None = None):
    out = {}
    for name in names:
        if name == "conventional":
            out[name] = conventional_policy(cfg.system)
        elif name == "fuzzy":
            out[name] = FuzzyPolicy(cfg.fuzzy)
        elif name == "fncac":
            if params is None:
                raise InvalidParameterError("fncac needs trained parameters")
            out[name] = FncacPolicy(params, cfg.rrbfn.cost_bias)
        else:
            raise ConfigError(f"unknown policy {name!r}", key="policies")
    return out


# -- sweeps ------------------------------------------------------------------------


def replication_seeds(seed: int, replications: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(replications)]


def _symmetric(system: SystemConfig) -> bool:
    mu = system.service_rates
    return len(system.classes) == 3 and bool(np.all(mu == mu[0]))


def analytical_point(system: SystemConfig, a: float) -> dict[str, float] | None:
    """Recurrence blocking of the symmetric three-class model, keyed by class scope."""
    if system.total_channels < 3 or not _symmetric(system):
        return None
    rep = blocking_from_recurrence(solve_recurrence(a, system.total_channels))
    return {"aggregate": rep.aggregate_blocking, "type1": rep.type1_blocking,
            "type2": rep.type2_blocking, "type3": rep.type3_blocking}


def ctmc_point(system: SystemConfig, policy: AdmissionPolicy, max_states: int):
    if policy.stateful:
        return None
    try:
        rep = analyze(system, policy, max_states)
    except ResourceLimitError:
        return None
    vals = {"aggregate": rep.aggregate_blocking}
    for cls in system.classes:
        vals[cls.id.label] = rep.for_class(cls.id)
    return vals


def simulate_point(system: SystemConfig, policy: AdmissionPolicy, arrivals: float,
                   warmup_fraction: float, seeds: Iterable[int]) -> SimReport:
    horizon = horizon_for_arrivals(system, arrivals)
    reports = [run(system, policy, warmup_fraction * horizon, horizon, s) for s in seeds]
    return pool_reports(system, reports)


def _rows_for(system, a, name, policy, cfg, scopes, analytical, seed) -> list[SweepRow]:
    s = cfg.sweep
    ctmc = ctmc_point(system, policy, s.max_ctmc_states)
    rep = simulate_point(system, policy, s.arrivals, s.warmup_fraction,
                         replication_seeds(seed, s.replications))
    rows = []
    for scope in scopes:
        if scope == "aggregate":
            emp, hw = rep.aggregate_blocking, rep.aggregate_half_width_95
        else:
            cid = ClassId[scope.upper()]
            emp, hw = rep.blocking(cid), rep.half_width(cid)
        rows.append(SweepRow(
            a, name, scope,
            None if analytical is None else analytical.get(scope),
            None if ctmc is None else ctmc.get(scope),
            emp, hw, seed,
        ))
    return rows


def sweep(cfg: ExperimentConfig, params: RrbfnParams | None = None,
          only: ClassId | None = None, policies: Sequence[str] | None = None) -> list[SweepRow]:
    """Blocking over the utilization grid for each policy.

    With ``only`` set, the system offers that class's traffic alone and rows
    cover that class. Rows are sorted by (policy, class_scope, utilization).
    """
    names = tuple(policies or cfg.policies)
    if "fncac" in names and params is None:
        params, _ = fncac_params(cfg)
    pols = build_policies(cfg, names, params)
    scopes = CLASS_SCOPES if only is None else (only.label,)
    rows = []
    for a in cfg.sweep.grid():
        system = cfg.system.with_utilization(a)
        analytical = analytical_point(system, a)
        if only is not None:
            system = system.only(only)
            analytical = None
        for name in names:
            rows.extend(_rows_for(system, a, name, pols[name], cfg, scopes, analytical, cfg.seed))
    rows.sort(key=SweepRow.key)
    return rows


def analyze_rows(cfg: ExperimentConfig, a: float | None = None) -> list[SweepRow]:
    """Recurrence and CTMC blocking only, at the configured rates or at utilization ``a``."""
    system = cfg.system if a is None else cfg.system.with_utilization(a)
    util = float(np.mean(system.arrival_rates / system.service_rates))
    analytical = analytical_point(system, util)
    names = [n for n in cfg.policies if n != "fncac"] or ["conventional"]
    pols = build_policies(cfg, names)
    rows = []
    for name in names:
        ctmc = ctmc_point(system, pols[name], cfg.sweep.max_ctmc_states)
        for scope in CLASS_SCOPES:
            rows.append(SweepRow(util, name, scope,
                                 None if analytical is None else analytical[scope],
                                 None if ctmc is None else ctmc.get(scope),
                                 None, None, cfg.seed))
    rows.sort(key=SweepRow.key)
    return rows


def simulate_rows(cfg: ExperimentConfig, a: float | None = None,
                  params: RrbfnParams | None = None) -> list[SweepRow]:
    """One replication per policy at the configured rates (or at utilization ``a``)."""
    system = cfg.system if a is None else cfg.system.with_utilization(a)
    util = float(np.mean(system.arrival_rates / system.service_rates))
    if "fncac" in cfg.policies and params is None:
        params, _ = fncac_params(cfg)
    pols = build_policies(cfg, cfg.policies, params)
    analytical = analytical_point(system, util)
    rows = []
    for name in cfg.policies:
        ctmc = ctmc_point(system, pols[name], cfg.sweep.max_ctmc_states)
        rep = simulate_point(system, pols[name], cfg.sweep.arrivals, cfg.sweep.warmup_fraction,
                             [cfg.seed])
        for scope in CLASS_SCOPES:
            if scope == "aggregate":
                emp, hw = rep.aggregate_blocking, rep.aggregate_half_width_95
            else:
                cid = ClassId[scope.upper()]
                emp, hw = rep.blocking(cid), rep.half_width(cid)
            rows.append(SweepRow(util, name, scope,
                                 None if analytical is None else analytical[scope],
                                 None if ctmc is None else ctmc.get(scope), emp, hw, cfg.seed))
    rows.sort(key=SweepRow.key)
    return rows


# -- CSV ---------------------------------------------------------------------------


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".10g")


def metadata_block(cfg: ExperimentConfig, command: str, extra: dict | None = None) -> list[str]:
    lines = [
        f"generator: caclab {__version__}",
        f"command: {command}",
        f"config_hash: {config_hash(cfg)}",
        f"seed: {cfg.seed}",
        f"defaults_applied: {', '.join(cfg.defaults_applied) or 'none'}",
        "horizon: sweep.arrivals offered calls per replication; warmup excluded",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    lines.append("effective config:")
    lines += [f"| {ln}" if ln else "|" for ln in emit_config(cfg).splitlines()]
    return lines


def emit_csv(rows: Sequence[SweepRow], path, metadata: Sequence[str] = ()) -> Path:
    """Comment block, header, one record per row; numbers with 10 significant digits."""
    if not rows:
        raise InvalidParameterError("no rows to write")
    buf = io.StringIO()
    for line in metadata:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_cell(getattr(r, c)) for c in CSV_COLUMNS])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> list[SweepRow]:
    text = Path(path).read_text()
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise InvalidParameterError(f"{path}: unexpected header {reader.fieldnames}")

    def num(s):
        return None if s == "" else float(s)

    return [SweepRow(float(d["utilization"]), d["policy"], d["class_scope"], num(d["analytical"]),
                     num(d["ctmc"]), num(d["empirical"]), num(d["half_width"]), int(d["seed"]))
            for d in reader]


# -- commands ----------------------------------------------------------------------


def train_command(cfg: ExperimentConfig, out=None) -> tuple[Path, TrainingResult]:
    res = train_fncac(cfg)
    out_dir = Path(out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = [f"caclab {__version__}", f"config_hash {config_hash(cfg)}", f"seed {cfg.seed}",
            f"teacher {cfg.rrbfn.teacher}", f"heldout_accuracy {res.test_accuracy:.6f}",
            f"best_epoch {res.best_epoch}"]
    path = save_params(res.params, out_dir / PARAMS_FILE, meta)
    return path, res


def sweep_command(cfg: ExperimentConfig, out=None) -> Path:
    params, info = (None, {})
    if "fncac" in cfg.policies:
        params, info = fncac_params(cfg)
    rows = sweep(cfg, params)
    path = Path(out or cfg.output_dir) / "sweep.csv"
    return emit_csv(rows, path, metadata_block(cfg, "sweep", info))


def figures_command(cfg: ExperimentConfig, out=None) -> dict[str, Path]:
    """Five CSV files: aggregate comparison, FNCAC per class, three single-class systems."""
    out_dir = Path(out or cfg.output_dir)
    params, info = fncac_params(cfg)
    names = tuple(dict.fromkeys((*cfg.policies, "fncac")))
    rows = sweep(cfg, params, policies=names)
    written = {}
    fig4 = [r for r in rows if r.class_scope == "aggregate" and r.policy in cfg.policies]
    fig5 = [r for r in rows if r.policy == "fncac" and r.class_scope != "aggregate"]
    written["fig4"] = emit_csv(fig4, out_dir / FIGURE_FILES["fig4"],
                               metadata_block(cfg, "figures fig4", info))
    written["fig5"] = emit_csv(fig5, out_dir / FIGURE_FILES["fig5"],
                               metadata_block(cfg, "figures fig5", info))
    for fig, cid in (("fig6", ClassId.TYPE1), ("fig7", ClassId.TYPE2), ("fig8", ClassId.TYPE3)):
        single = sweep(cfg, params, only=cid)
        written[fig] = emit_csv(single, out_dir / FIGURE_FILES[fig],
                                metadata_block(cfg, f"figures {fig}", info))
    return written


def relative_reduction(ours: float, baseline: float) -> float:
    """``1 - ours / baseline``; NaN when the baseline is zero."""
    return math.nan if baseline == 0 else 1.0 - ours / baseline
