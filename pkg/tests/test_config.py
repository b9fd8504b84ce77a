import pytest
from hypothesis import given, strategies as st

from caclab.config import (
    ExperimentConfig,
    RrbfnSettings,
    SweepSettings,
    config_hash,
    emit_config,
    parse_config,
    parse_config_text,
)
from caclab.errors import ConfigError
from caclab.policies import FuzzyController
from caclab.traffic import SystemConfig, ThresholdSet, canonical_classes

MINIMAL = """\
# smallest useful experiment
[system]
channels = 30
arrival_rate = 0.5
service_rate = 1.0
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg.system.total_channels == 30
    assert list(cfg.system.arrival_rates) == [0.5] * 3
    assert cfg.system.thresholds == ThresholdSet(6, 12, 18)
    assert cfg.policies == ("conventional", "fuzzy", "fncac")
    assert cfg.sweep == SweepSettings()
    assert cfg.sweep.grid() == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    assert cfg.rrbfn == RrbfnSettings()
    assert cfg.rrbfn.training_size == 1000
    assert cfg.fuzzy == FuzzyController()
    assert "sweep.replications" in cfg.defaults_applied
    assert "system.arrival_rate" not in cfg.defaults_applied


def test_full_config():
    text = """\
[system]
channels = 12
rats = 6, 6
arrival_rate = 0.2, 0.3, 0.4   # per class
service_rate = 1
thresholds = 1, 3, 5
seed = 42

[policies]
names = fuzzy, conventional

[sweep]
start = 0.2
stop = 1.0
step = 0.2
replications = 1
arrivals = 1e4

[fuzzy]
accept_threshold = 0.6
rules = Reject Reject Reject; WeakAccept Reject Reject; StrongAccept StrongAccept WeakAccept

[rrbfn]
hidden_width = 8
teacher = fuzzy

[output]
dir = results
"""
    cfg = parse_config_text(text)
    assert cfg.system.rats == (6, 6)
    assert list(cfg.system.arrival_rates) == [0.2, 0.3, 0.4]
    assert cfg.seed == 42
    assert cfg.policies == ("fuzzy", "conventional")
    assert cfg.sweep.grid() == (0.2, 0.4, 0.6, 0.8, 1.0)
    assert cfg.sweep.arrivals == 10_000
    assert cfg.fuzzy.rule_table[1] == ("WeakAccept", "Reject", "Reject")
    assert cfg.rrbfn.teacher == "fuzzy" and cfg.output_dir == "results"


@pytest.mark.parametrize("text, key, line", [
    ("[system]\nchannels = 30\n[sweep]\nstep = 0\n", "sweep.step", 4),
    ("[system]\nchannels = 30\ncolour = red\n", "system.colour", 3),
    ("[system]\nchannels = 30\n\n[sweep]\nreplications = 0\n", "sweep.replications", 5),
    ("[system]\nchannels = 30\nthresholds = 6, 12, 40\n", "system.thresholds", 3),
    ("[system]\nchannels = x\n", "system.channels", 2),
    ("[system]\nchannels = 30\narrival_rate = 1, 2\n", "system.arrival_rate", 3),
    ("[system]\nchannels = 30\nservice_rate = 0\n", "system.service_rate", 3),
    ("[system]\nchannels = 30\n[policies]\nnames = greedy\n", "policies.names", 4),
    ("[system]\nchannels = 30\n[rrbfn]\nteacher = oracle\n", "rrbfn.teacher", 4),
    ("[system]\nchannels = 30\n[fuzzy]\ncapacity_sets = 0,0,0.3; 0.4,0.5,0.6; 0.7,1,1\n",
     "fuzzy.capacity_sets", 4),
    ("[system]\nchannels = 30\n[sweep]\nstop = 0.05\n", "sweep.stop", 4),
])
def test_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert err.value.key == key
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


@pytest.mark.parametrize("text, line", [
    ("channels = 30\n", 1),
    ("[system]\nchannels = 30\nchannels = 31\n", 3),
    ("[system]\nchannels = 30\n[bogus]\nx = 1\n", 3),
    ("[system]\nchannels 30\n", 2),
])
def test_syntax_errors(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert err.value.line == line


def test_channels_required():
    with pytest.raises(ConfigError, match="system.channels"):
        parse_config_text("[sweep]\nstep = 0.1\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(tmp_path / "nope.ini")


def test_round_trip(tmp_path):
    cfg = parse_config_text(MINIMAL)
    path = tmp_path / "effective.ini"
    path.write_text(emit_config(cfg))
    again = parse_config(path)
    assert again == cfg
    assert emit_config(again) == emit_config(cfg)
    assert config_hash(again) == config_hash(cfg)


@given(
    st.integers(3, 60),
    st.floats(0.01, 10), st.floats(0.01, 10),
    st.integers(0, 2**32),
    st.lists(st.sampled_from(["conventional", "fuzzy", "fncac"]), min_size=1, unique=True),
    st.floats(0, 1), st.floats(0.001, 1), st.integers(1, 9),
    st.floats(0.001, 2), st.integers(0, 8),
)
def test_round_trip_property(n, lam, mu, seed, pols, start, step, reps, lr, hist):
    system = SystemConfig(n, canonical_classes(lam, mu), rng_seed=seed)
    cfg = ExperimentConfig(
        system, tuple(pols), SweepSettings(start=start, stop=start + 3 * step, step=step,
                                           replications=reps),
        FuzzyController(accept_threshold=0.55),
        RrbfnSettings(learning_rate=lr, history_length=hist),
    )
    assert parse_config_text(emit_config(cfg)) == cfg


def test_overrides():
    cfg = parse_config_text(MINIMAL).with_overrides(seed=9, output_dir="x", policies=["Fuzzy"])
    assert cfg.seed == 9 and cfg.output_dir == "x" and cfg.policies == ("fuzzy",)
    with pytest.raises(ConfigError):
        cfg.with_overrides(policies=["nope"])
    with pytest.raises(ConfigError):
        cfg.with_overrides(seed=-1)


def test_hash_changes_with_content():
    a = parse_config_text(MINIMAL)
    assert config_hash(a) != config_hash(a.with_overrides(seed=1))


def test_grid_edges():
    assert SweepSettings(0.0, 0.0, 0.1).grid() == (0.0,)
    assert SweepSettings(0.1, 0.35, 0.1).grid() == (0.1, 0.2, 0.3)


def test_shipped_default_config():
    from pathlib import Path
    shipped = parse_config(Path(__file__).parents[1] / "configs" / "default.ini")
    assert emit_config(shipped) == emit_config(parse_config_text("[system]\nchannels = 30\n"))
    assert shipped.defaults_applied == ()
