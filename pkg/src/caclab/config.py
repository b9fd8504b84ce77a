"""Experiment configuration: an INI-style file of ``[section]`` blocks and ``key = value`` lines.

Every key has a default, so a file naming only the pool size and rates is a
complete experiment. :func:`emit_config` writes the effective configuration
back out in the same syntax; reparsing it gives an equal :class:`ExperimentConfig`.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import CacLabError, ConfigError
from .policies import CONSEQUENTS, DEFAULT_RULES, DEFAULT_SETS, FuzzyController
from .traffic import ClassId, SystemConfig, ThresholdSet, TrafficClass

POLICY_NAMES = ("conventional", "fuzzy", "fncac")
TEACHERS = ("conventional", "fuzzy", "admit_if_fits")


@dataclass(frozen=True)
class SweepSettings:
    start: float = 0.1
    stop: float = 1.0
    step: float = 0.1
    replications: int = 5
    arrivals: int = 100_000  # offered calls per replication
    warmup_fraction: float = 0.1
    max_ctmc_states: int = 200_000

    def grid(self) -> tuple[float, ...]:
        """Grid points rounded to 12 decimals so 0.1-steps land on clean values."""
        n = int(round((self.stop - self.start) / self.step + 1e-9))
        pts = [round(self.start + k * self.step, 12) for k in range(n + 1)]
        return tuple(p for p in pts if p <= self.stop + 1e-12)


@dataclass(frozen=True)
class RrbfnSettings:
    hidden_width: int = 32
    training_size: int = 1000
    epochs: int = 300
    learning_rate: float = 0.05
    batch_size: int = 32
    recurrent_std: float = 0.5
    cost_bias: float = 1.0
    history_length: int = 4
    teacher: str = "conventional"
    params_file: str = ""  # pre-trained parameters; empty means train on demand


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig
    policies: tuple[str, ...] = POLICY_NAMES
    sweep: SweepSettings = SweepSettings()
    fuzzy: FuzzyController = FuzzyController()
    rrbfn: RrbfnSettings = RrbfnSettings()
    output_dir: str = "out"
    defaults_applied: tuple[str, ...] = field(default=(), compare=False)

    @property
    def seed(self) -> int:
        return self.system.rng_seed

    def with_overrides(self, seed=None, output_dir=None, policies=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed must be unsigned", key="seed")
            cfg = replace(cfg, system=replace(cfg.system, rng_seed=int(seed)))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        if policies is not None:
            cfg = replace(cfg, policies=_policy_list(policies, "policies"))
        return cfg


# -- parsing ----------------------------------------------------------------------

_KEYS = {
    "system": ("channels", "rats", "arrival_rate", "service_rate", "thresholds", "seed"),
    "policies": ("names",),
    "sweep": ("start", "stop", "step", "replications", "arrivals", "warmup_fraction",
              "max_ctmc_states"),
    "fuzzy": ("capacity_sets", "demand_sets", "rules", "accept_threshold"),
    "rrbfn": ("hidden_width", "training_size", "epochs", "learning_rate", "batch_size",
              "recurrent_std", "cost_bias", "history_length", "teacher", "params_file"),
    "output": ("dir",),
}


class _Source:
    """Parsed sections plus the line number of every key, for error messages."""

    def __init__(self, text: str, name: str):
        self.name = name
        self.lines: dict[tuple[str, str], int] = {}
        parser = configparser.ConfigParser(
            interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",),
            empty_lines_in_values=False, default_section="\x00",
        )
        parser.optionxform = str
        try:
            parser.read_string(text, source=name)
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("expected a [section] header", line=exc.lineno) from exc
        except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
            key = getattr(exc, "option", None) or exc.section
            raise ConfigError(f"duplicate entry in [{exc.section}]", key=key, line=exc.lineno) from exc
        except configparser.ParsingError as exc:
            lineno, raw = exc.errors[0]
            raise ConfigError(f"malformed line {raw.strip()!r}", line=lineno) from exc
        self.parser = parser

        section = None
        header = re.compile(r"\s*\[([^\]]+)\]")
        for n, raw in enumerate(text.splitlines(), start=1):
            m = header.match(raw)
            if m:
                section = m.group(1).strip()
                continue
            body = raw.split("#", 1)[0]
            if section and "=" in body and not raw[:1].isspace():
                self.lines[(section, body.split("=", 1)[0].strip())] = n

        for sec in parser.sections():
            if sec not in _KEYS:
                raise ConfigError(f"unknown section [{sec}]", line=self._section_line(text, sec))
            for key in parser[sec]:
                if key not in _KEYS[sec]:
                    raise ConfigError(f"unknown key in [{sec}]", key=f"{sec}.{key}",
                                      line=self.lines.get((sec, key)))
        self.used: set[str] = set()

    @staticmethod
    def _section_line(text, sec):
        for n, raw in enumerate(text.splitlines(), start=1):
            if raw.strip() == f"[{sec}]":
                return n
        return None

    def has(self, sec, key) -> bool:
        return self.parser.has_option(sec, key)

    def get(self, sec, key, convert, default):
        if not self.has(sec, key):
            return default
        self.used.add(f"{sec}.{key}")
        raw = self.parser.get(sec, key).strip()
        try:
            return convert(raw)
        except (ValueError, CacLabError) as exc:
            raise self.error(sec, key, f"bad value {raw!r}: {exc}") from exc

    def error(self, sec, key, message) -> ConfigError:
        return ConfigError(message, key=f"{sec}.{key}", line=self.lines.get((sec, key)))


def _floats(raw: str) -> tuple[float, ...]:
    vals = tuple(float(v) for v in raw.replace(",", " ").split())
    if not vals:
        raise ValueError("empty list")
    return vals


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def _triangles(raw: str) -> tuple[tuple[float, float, float], ...]:
    sets = tuple(_floats(part) for part in raw.split(";"))
    if any(len(s) != 3 for s in sets):
        raise ValueError("each membership function needs three numbers a, b, c")
    return sets


def _rules(raw: str) -> tuple[tuple[str, ...], ...]:
    rows = tuple(tuple(part.replace(",", " ").split()) for part in raw.split(";"))
    for row in rows:
        for c in row:
            if c not in CONSEQUENTS:
                raise ValueError(f"unknown consequent {c!r}")
    return rows


def _policy_list(raw, what) -> tuple[str, ...]:
    names = raw if isinstance(raw, (list, tuple)) else raw.replace(",", " ").split()
    names = tuple(n.strip().lower() for n in names if n.strip())
    if not names:
        raise ConfigError("at least one policy is required", key=what)
    for n in names:
        if n not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {n!r}; choose from {', '.join(POLICY_NAMES)}",
                              key=what)
    return tuple(dict.fromkeys(names))


def _rates(values: tuple[float, ...], src: _Source, key: str) -> tuple[float, ...]:
    if len(values) == 1:
        return values * len(ClassId)
    if len(values) != len(ClassId):
        raise src.error("system", key, "give one rate for all classes or one per class")
    return values


def parse_config_text(text: str, name: str = "<config>") -> ExperimentConfig:
    src = _Source(text, name)
    if not src.has("system", "channels"):
        raise ConfigError("the pool size is required", key="system.channels")

    channels = src.get("system", "channels", int, None)
    rats = src.get("system", "rats", _ints, ())
    lam = _rates(src.get("system", "arrival_rate", _floats, (1.0,)), src, "arrival_rate")
    mu = _rates(src.get("system", "service_rate", _floats, (1.0,)), src, "service_rate")
    thresholds = src.get("system", "thresholds", lambda r: ThresholdSet(*_ints(r)), None)
    seed = src.get("system", "seed", int, 0)
    try:
        classes = tuple(TrafficClass(c, lam[c], mu[c]) for c in ClassId)
    except CacLabError as exc:
        key = "arrival_rate" if "arrival" in str(exc) else "service_rate"
        raise src.error("system", key, str(exc)) from exc
    try:
        system = SystemConfig(channels, classes, thresholds, seed, rats)
    except CacLabError as exc:
        msg = str(exc)
        key = ("thresholds" if "threshold" in msg else "rats" if "RAT" in msg
               else "seed" if "seed" in msg else "channels")
        raise src.error("system", key, msg) from exc

    policies = POLICY_NAMES
    if src.has("policies", "names"):
        try:
            policies = src.get("policies", "names", lambda r: _policy_list(r, "policies.names"),
                               POLICY_NAMES)
        except ConfigError as exc:
            raise src.error("policies", "names", str(exc)) from exc

    d = SweepSettings()
    sweep = SweepSettings(
        start=src.get("sweep", "start", float, d.start),
        stop=src.get("sweep", "stop", float, d.stop),
        step=src.get("sweep", "step", float, d.step),
        replications=src.get("sweep", "replications", int, d.replications),
        arrivals=src.get("sweep", "arrivals", lambda r: int(float(r)), d.arrivals),
        warmup_fraction=src.get("sweep", "warmup_fraction", float, d.warmup_fraction),
        max_ctmc_states=src.get("sweep", "max_ctmc_states", int, d.max_ctmc_states),
    )
    checks = (
        ("start", sweep.start >= 0, "sweep start must be >= 0"),
        ("step", sweep.step > 0, "sweep step must be > 0"),
        ("stop", sweep.stop >= sweep.start, "sweep stop must be >= start"),
        ("replications", sweep.replications >= 1, "replications must be >= 1"),
        ("arrivals", sweep.arrivals >= 1, "arrivals must be >= 1"),
        ("warmup_fraction", 0 <= sweep.warmup_fraction < 1, "warmup_fraction must be in [0, 1)"),
        ("max_ctmc_states", sweep.max_ctmc_states >= 1, "max_ctmc_states must be >= 1"),
    )
    for key, ok, msg in checks:
        if not ok:
            raise src.error("sweep", key, msg)

    try:
        fuzzy = FuzzyController(
            capacity_sets=src.get("fuzzy", "capacity_sets", _triangles, DEFAULT_SETS),
            demand_sets=src.get("fuzzy", "demand_sets", _triangles, DEFAULT_SETS),
            rule_table=src.get("fuzzy", "rules", _rules, DEFAULT_RULES),
            accept_threshold=src.get("fuzzy", "accept_threshold", float, 0.5),
        )
    except CacLabError as exc:
        msg = str(exc)
        key = ("capacity_sets" if "capacity" in msg else "demand_sets" if "demand" in msg
               else "rules")
        raise src.error("fuzzy", key, msg) from exc

    r = RrbfnSettings()
    rrbfn = RrbfnSettings(
        hidden_width=src.get("rrbfn", "hidden_width", int, r.hidden_width),
        training_size=src.get("rrbfn", "training_size", int, r.training_size),
        epochs=src.get("rrbfn", "epochs", int, r.epochs),
        learning_rate=src.get("rrbfn", "learning_rate", float, r.learning_rate),
        batch_size=src.get("rrbfn", "batch_size", int, r.batch_size),
        recurrent_std=src.get("rrbfn", "recurrent_std", float, r.recurrent_std),
        cost_bias=src.get("rrbfn", "cost_bias", float, r.cost_bias),
        history_length=src.get("rrbfn", "history_length", int, r.history_length),
        teacher=src.get("rrbfn", "teacher", str.lower, r.teacher),
        params_file=src.get("rrbfn", "params_file", str, r.params_file),
    )
    checks = (
        ("hidden_width", rrbfn.hidden_width >= 1, "hidden_width must be >= 1"),
        ("training_size", rrbfn.training_size >= 10, "training_size must be >= 10"),
        ("epochs", rrbfn.epochs >= 0, "epochs must be >= 0"),
        ("learning_rate", rrbfn.learning_rate > 0, "learning_rate must be > 0"),
        ("batch_size", rrbfn.batch_size >= 1, "batch_size must be >= 1"),
        ("recurrent_std", rrbfn.recurrent_std > 0, "recurrent_std must be > 0"),
        ("history_length", rrbfn.history_length >= 0, "history_length must be >= 0"),
        ("teacher", rrbfn.teacher in TEACHERS, f"teacher must be one of {', '.join(TEACHERS)}"),
    )
    for key, ok, msg in checks:
        if not ok:
            raise src.error("rrbfn", key, msg)

    output_dir = src.get("output", "dir", str, "out")
    defaults = tuple(f"{sec}.{key}" for sec, keys in _KEYS.items() for key in keys
                     if f"{sec}.{key}" not in src.used and not (sec, key) == ("system", "channels"))
    return ExperimentConfig(system, policies, sweep, fuzzy, rrbfn, output_dir, defaults)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, str(path))


# -- emission ---------------------------------------------------------------------


def _num(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _join(vals) -> str:
    return ", ".join(_num(v) for v in vals)


def emit_config(cfg: ExperimentConfig) -> str:
    """Effective configuration with every key written out."""
    sys_ = cfg.system
    lam = [c.arrival_rate for c in sys_.classes]
    mu = [c.service_rate for c in sys_.classes]
    s, r, f = cfg.sweep, cfg.rrbfn, cfg.fuzzy
    lines = [
        "[system]",
        f"channels = {sys_.total_channels}",
        f"rats = {_join(sys_.rats)}",
        f"arrival_rate = {_join(lam)}",
        f"service_rate = {_join(mu)}",
    ]
    if sys_.thresholds is not None:
        lines.append(f"thresholds = {_join(sys_.thresholds.as_tuple())}")
    lines += [
        f"seed = {sys_.rng_seed}",
        "",
        "[policies]",
        f"names = {', '.join(cfg.policies)}",
        "",
        "[sweep]",
        *(f"{k} = {_num(getattr(s, k))}" for k in _KEYS["sweep"]),
        "",
        "[fuzzy]",
        f"capacity_sets = {'; '.join(_join(t) for t in f.capacity_sets)}",
        f"demand_sets = {'; '.join(_join(t) for t in f.demand_sets)}",
        f"rules = {'; '.join(' '.join(row) for row in f.rule_table)}",
        f"accept_threshold = {_num(float(f.accept_threshold))}",
        "",
        "[rrbfn]",
        *(f"{k} = {_num(getattr(r, k))}" for k in _KEYS["rrbfn"]),
        "",
        "[output]",
        f"dir = {cfg.output_dir}",
    ]
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()[:16]
