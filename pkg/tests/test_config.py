from pathlib import Path

import pytest

from qaoa_control.config import (
    PPO_CONFIG,
    Algorithm,
    ContinuousFamily,
    ExperimentConfig,
    NoiseKind,
    apply_override,
)
from qaoa_control.exceptions import ConfigError

RESOURCES = Path(__file__).resolve().parent.parent / "resources"


def test_defaults():
    config = ExperimentConfig()
    assert config.algorithm == Algorithm.RL_QAOA
    assert config.env.ising.n_sites == 4
    assert config.env.ising.h_z == 0.4523
    assert config.env.total_T == 10.0
    assert config.env.action_set == ("H1", "H2", "Y", "X|Y", "Y|Z")
    assert config.env.noise.kind == NoiseKind.NONE
    assert config.ppo.batch_size == PPO_CONFIG["batch_size"]
    assert config.ppo.continuous_family == ContinuousFamily.SIGMOID_GAUSSIAN
    assert config.baselines.cd_qaoa.eps_discrete == 0.1


def test_empty_document_gives_defaults():
    assert ExperimentConfig.from_yaml("") == ExperimentConfig()
    assert ExperimentConfig.from_yaml("# only a comment\n") == ExperimentConfig()


def test_unknown_key_names_key_and_line():
    text = "seed: 3\nenv:\n  total_T: 5.0\n  qq: 3\n"
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_yaml(text)
    assert info.value.key == "env.qq"
    assert info.value.line == 4
    assert "unknown key" in str(info.value)


def test_invalid_value_names_key_and_line():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_yaml("ppo:\n  batch_size: 0\n")
    assert info.value.key == "ppo.batch_size"
    assert info.value.line == 2


def test_duplicate_action_labels_rejected():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_yaml("env:\n  action_set: [H1, H1]\n")
    assert info.value.key.startswith("env.action_set")


def test_malformed_yaml():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_yaml("env: [1, 2\n")
    assert "malformed YAML" in str(info.value)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml("- just\n- a list\n")


def test_overrides_apply_before_validation():
    config = ExperimentConfig.from_yaml("seed: 1\n", ["env.q=5", "env.noise.kind=quantum", "algorithm=cd_qaoa"])
    assert config.env.q == 5
    assert config.env.noise.kind == NoiseKind.QUANTUM
    assert config.algorithm == Algorithm.CD_QAOA
    assert config.seed == 1
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml("", ["env.q=0"])


def test_apply_override_requires_assignment():
    raw = {}
    apply_override(raw, "ppo.hidden_units=[4, 4]")
    assert raw == {"ppo": {"hidden_units": [4, 4]}}
    with pytest.raises(ConfigError):
        apply_override(raw, "ppo.hidden_units")


def test_with_updates_revalidates():
    config = ExperimentConfig().with_updates(**{"env.noise.kind": "classical_gaussian", "env.noise.strength": 0.2})
    assert config.env.noise.strength == 0.2
    assert ExperimentConfig().env.noise.strength == 0.0
    with pytest.raises(ValueError):
        ExperimentConfig().with_updates(**{"env.noise.strength": -1.0})


def test_yaml_round_trip():
    config = ExperimentConfig().with_updates(seed=9, **{"env.q": 3, "ppo.continuous_family": "beta"})
    assert ExperimentConfig.from_yaml(config.to_yaml()) == config


def test_load(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.yml")
    path = tmp_path / "run.yml"
    path.write_text("algorithm: qaoa\nenv:\n  q: 4\n")
    config = ExperimentConfig.load(path, ["seed=2"])
    assert (config.algorithm, config.env.q, config.seed) == (Algorithm.QAOA, 4, 2)
    assert ExperimentConfig.load(None, ["seed=5"]).seed == 5


@pytest.mark.parametrize("name", ["default.yml", "sweep_noise.yml", "adiabatic_scan.yml"])
def test_bundled_configs_load(name):
    config = ExperimentConfig.load(RESOURCES / name)
    assert config.output_dir.startswith("runs/")
