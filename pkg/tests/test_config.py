import json

import numpy as np
import pytest

from stip.config import ENK_DEFAULTS, ExperimentConfig, default_config, load_config, parse_override
from stip.exceptions import ConfigurationError


@pytest.mark.parametrize("system", ["lorenz63", "rossler", "chen"])
def test_defaults_validate(system):
    cfg = load_config(system=system)
    assert cfg["system"] == system
    assert cfg == ExperimentConfig(default_config(system))


def test_json_round_trip(tmp_path):
    cfg = load_config(overrides=["observation.T=4", "calibration.N=7"])
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    again = load_config(str(path))
    assert again == cfg
    assert again.to_json() == cfg.to_json()


def test_partial_file_fills_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"system": "chen", "calibration": {"J_ensemble": 20}}))
    cfg = load_config(str(path))
    assert cfg["calibration"]["J_ensemble"] == 20
    assert cfg["calibration"]["N"] == default_config("chen")["calibration"]["N"]
    assert cfg["truth"] == default_config("chen")["truth"]


def test_override_precedence(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 3}))
    assert load_config(str(path), ["seed=9"])["seed"] == 9


def test_override_parsing():
    assert parse_override("a.b=1.5") == ("a.b", 1.5)
    assert parse_override("a=[1, 2]") == ("a", [1, 2])
    assert parse_override("name=eki") == ("name", "eki")
    with pytest.raises(ConfigurationError):
        parse_override("no_equals")


def test_replace_is_copy():
    cfg = load_config()
    new = cfg.replace(**{"observation.T": 2.0})
    assert new["observation"]["T"] == 2.0
    assert cfg["observation"]["T"] == default_config()["observation"]["T"]


def test_prior_reordered_to_system_order():
    cfg = load_config()
    p = cfg["prior"]
    names = cfg.benchmark.system.param_names
    prior = cfg.prior()
    for i, name in enumerate(names):
        j = p["param_order"].index(name)
        assert prior.mu0[i] == p["mu0"][j]
        assert prior.sigma0[i] == p["sigma0"][j]


def test_enk_params_fill_method_defaults():
    cfg = load_config(overrides=['calibration.method="eki"'])
    assert cfg.enk_params()["dt"] == ENK_DEFAULTS["eki"]["dt"]
    cfg = cfg.replace(**{"calibration.dt": 0.5})
    assert cfg.enk_params()["dt"] == 0.5


@pytest.mark.parametrize(
    "override",
    [
        "system=\"duffing\"",
        "truth=[1, 2]",
        "observation.h=5.0",
        "observation.J=1",
        "observation.initial_state=\"random\"",
        "likelihood.kind=\"gaussian\"",
        "likelihood.ell_x=0",
        "prior.param_order=[\"a\", \"b\", \"c\"]",
        "calibration.method=\"sgd\"",
        "calibration.J_ensemble=1",
        "calibration.N=-1",
        "emulation.selection=\"random\"",
        "sampling.sampler=\"hmc\"",
        "sampling.beta=1.5",
        "sweep.axis=\"h\"",
        "fisher.trials=-1",
        "repeats=0",
        "unknown_key=1",
        "calibration.bogus=1",
    ],
)
def test_invalid_configs_rejected(override):
    with pytest.raises(ConfigurationError):
        load_config(overrides=[override])


def test_bad_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(str(path))
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "missing.json"))
    path.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        load_config(str(path))


def test_observation_grid():
    cfg = load_config(overrides=["observation.t0=100", "observation.T=10", "observation.J=100"])
    times = cfg.observation().times
    assert times[0] == 100 and np.isclose(times[-1], 110)
    assert len(times) == 100
