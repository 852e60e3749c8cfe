import math

import pytest
from hypothesis import given, settings, strategies as st

from polctl import config
from polctl.config import DEFAULTS, PRESETS, ScenarioConfig
from polctl.errors import ConfigError
from polctl.fiber import condition_number


def test_defaults_valid_and_round_trip():
    cfg = ScenarioConfig()
    assert config.loads(config.dumps(cfg)) == cfg
    assert set(cfg.values) == set(DEFAULTS)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    cfg = config.from_preset(name)
    assert config.loads(config.dumps(cfg)) == cfg


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 2.0), st.floats(0.0, 1.0), st.booleans(),
       st.lists(st.floats(0.0, 1.0), min_size=1, max_size=5))
def test_round_trip_property(seed, dgd, drift, control, grid):
    cfg = ScenarioConfig({"seed": seed, "channel.dgd_ps": dgd, "channel.drift_rate": drift,
                          "experiment.control": control, "experiment.grid": grid})
    assert config.loads(config.dumps(cfg)) == cfg


def test_parse_comments_and_bare_strings():
    cfg = config.loads("# comment\n\nexperiment.kind = recovery\nseed = 5\nexperiment.signal = \"H\"\n")
    assert cfg.kind == "recovery" and cfg.seed == 5 and cfg["experiment.signal"] == "H"


@pytest.mark.parametrize("text", [
    "channel.dgd = 0.5",                       # unknown key
    "seed = 1\nseed = 2",                      # duplicate
    "no equals sign",
    "experiment.kind = dance",
    "channel.dgd_ps = -1",
    "channel.dgd_ps = true",
    "experiment.repeats = 0",
    "experiment.repeats = 2.5",
    "seed = -3",
    "controller.step_min = 0.9",               # above step_max
    "controller.shrink = 1.5",
    "controller.loop_period_us = 0",
    "channel.dt_us = 40",                      # 125 us loop is not a multiple
    "experiment.grid = []",
    "experiment.signal = \"Q\"",
    "channel.pmd_axis = [0, 0, 0]",
    "channel.pmd_axis = [1, 2]",
    "detector.efficiency = 1.5",
    "controller.extinction_db = -3",
    "channel.multiplexing = \"space\"",
    "experiment.target = \"nowhere\"",
    "experiment.control = 1",
    "channel.dgd_ps = NaN",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        config.loads(text)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        config.from_preset("nope")
    with pytest.raises(ConfigError):
        config.loads("", preset="nope")


def test_loop_period_and_targets():
    cfg = ScenarioConfig()
    assert cfg.loop_period == pytest.approx(125e-6)
    assert cfg.target_mode == "calibrated"
    assert cfg.replace(**{"experiment.kind": "sweep"}).target_mode == "launched"
    assert cfg.replace(**{"experiment.target": "launched"}).target_mode == "launched"


def test_channel_spec_operating_point():
    spec = config.from_preset("operating-point").channel_spec()
    assert condition_number(spec) == pytest.approx(0.34, abs=0.005)
    assert math.isclose(spec.pmd_axis.norm, 1.0)
    low = config.from_preset("low-stress").channel_spec()
    assert condition_number(low) == pytest.approx(0.05, rel=1e-9)


def test_time_multiplexing_is_ideal():
    cfg = ScenarioConfig({"channel.multiplexing": "time", "detector.crosstalk": 0.3})
    assert cfg.channel_spec().delta_omega == 0.0
    assert cfg.detector_params().crosstalk_prob == 0.0
    assert ScenarioConfig({"detector.crosstalk": 0.3}).detector_params().crosstalk_prob == 0.3


def test_detector_and_controller_mapping():
    cfg = ScenarioConfig()
    d = cfg.detector_params()
    assert d.dark_probability == pytest.approx(1e-4, rel=1e-3)
    c = cfg.controller_config()
    assert c.probe_time == pytest.approx(25e-6)


def test_named_and_vector_states():
    assert config.state_from_value("H") == config.state_from_value([1, 0, 0])
    assert config.axis_from_value([0, 0, 2]).array.tolist() == [0.0, 0.0, 1.0]


def test_load_from_file(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("seed = 9\n")
    assert config.load(p, preset="recovery").seed == 9
    assert config.load(p, preset="recovery").kind == "recovery"
