import pytest

from cvtrust.sim import PRESETS, ConfigError, Mode, Scenario, ScenarioConfig, parse_config


def test_parse_minimal():
    cfg = parse_config("[scenario]\nscenario = Intersection\narrival_rate = 0.05\nt_lat = 22000\nseed = 42\n")
    assert cfg.scenario is Scenario.Intersection and cfg.seed == 42 and cfg.t_lat == 22000


def test_out_of_range_probability_names_line():
    text = "[scenario]\nscenario = RouteChoice\narrival_rate = 0.2\nreroute_probability = 1.3\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == 4 and "line 4" in str(err.value)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config("[scenario]\nspeed_limit = 3\n")
    assert err.value.line == 2


def test_bad_number_rejected():
    with pytest.raises(ConfigError):
        parse_config("[scenario]\nt_lat = soon\n")


def test_missing_section():
    with pytest.raises(ConfigError):
        parse_config("t_lat = 1\n")


@pytest.mark.parametrize("kw", [dict(arrival_rate=0), dict(tb_s=-1), dict(exam_range=500.0),
                                dict(seed=-1), dict(epsilon=2.0)])
def test_invariants(kw):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kw)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    cfg = PRESETS[name]
    assert parse_config(cfg.to_ini()) == cfg


def test_preset_values():
    assert PRESETS["merge-defended"].arrival_rate == 0.2
    assert PRESETS["intersection-22"].arrival_rate == 0.05
    assert {PRESETS["intersection-22"].t_lat, PRESETS["intersection-60"].t_lat} == {22_000, 60_000}
    assert PRESETS["routes-0.33"].arrival_rate == 0.33
    assert PRESETS["merge-undefended"].mode is Mode.Undefended
