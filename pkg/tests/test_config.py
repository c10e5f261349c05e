import json

import pytest

from modules.config import TrainConfig, load_config
from modules.psp import PspMode, WeightScheme
from modules.sampler import SamplerKind
from modules.utils import ConfigError


def test_defaults():
    config = TrainConfig()
    assert (config.q, config.s, config.a) == (50, 2, 0.01)
    assert config.psp_mode is PspMode.W_EW
    assert config.weight_scheme is WeightScheme.LOG
    assert config.ks == (20, 30)
    assert config.patience == 10
    assert config.validate() == []


def test_dotted_sampler_keys():
    config = TrainConfig.from_mapping({"sampler.kind": "dynamic", "sampler.M": 16, "sampler.seed": 9})
    sampler = config.sampler_config()
    assert sampler.kind is SamplerKind.DYNAMIC
    assert sampler.candidate_count == 16
    assert sampler.seed == 9


def test_sampler_seed_defaults_to_root_seed():
    assert TrainConfig.from_mapping({"seed": 4}).sampler_config().seed == 4


def test_string_values_are_coerced():
    config = TrainConfig.from_mapping(
        {"q": "8", "a": "0.5", "ks": "10,20", "decoupled_weight_decay": "true", "sampler.seed": "none"}
    )
    assert config.q == 8 and config.a == 0.5
    assert config.ks == (10, 20)
    assert config.decoupled_weight_decay is True
    assert config.sampler_seed is None


def test_all_problems_are_reported_together():
    with pytest.raises(ConfigError) as info:
        TrainConfig.from_mapping({"bogus": 1, "q": 0, "mode": "two_hop", "lr": "fast"})
    keys = {issue.key for issue in info.value.issues}
    assert {"bogus", "q", "mode", "lr"} <= keys


@pytest.mark.parametrize("value", [1.5, "2.5", True])
def test_non_integer_s_is_rejected(value):
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"s": value})


def test_integral_float_s_is_accepted():
    assert TrainConfig.from_mapping({"s": 3.0}).s == 3


@pytest.mark.parametrize("ks", [[], [30, 20], [0, 10], [20, 20]])
def test_ks_must_be_ascending_and_positive(ks):
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"ks": ks})


def test_overrides_win_over_base():
    base = TrainConfig.from_mapping({"q": 10, "s": 3})
    config = base.with_overrides({"s": "1"})
    assert config.q == 10 and config.s == 1


def test_to_dict_uses_config_keys():
    payload = TrainConfig().to_dict()
    assert payload["sampler.kind"] == "uniform"
    assert payload["ks"] == [20, 30]
    assert "sampler_kind" not in payload
    assert TrainConfig.from_mapping(payload) == TrainConfig()


def test_load_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"mode": "one_hop", "scheme": "none"}), encoding="utf-8")
    config = load_config(path)
    assert config.psp_mode is PspMode.ONE_HOP
    assert load_config(None) == TrainConfig()


@pytest.mark.parametrize("content", ["{not json", "[1, 2]"])
def test_load_config_errors(tmp_path, content):
    path = tmp_path / "config.json"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
