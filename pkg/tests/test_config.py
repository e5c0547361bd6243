import json

import pytest

from config import DEFAULTS, config_digest, default_config, describe_keys, load_config, merge, parse_override
from errors import ConfigError


def test_defaults():
    cfg = default_config()
    assert cfg["seed"] == 0
    assert cfg["data.height"] == cfg["data.width"] == 32
    assert cfg["model.n_maps"] == 8 and cfg["model.n_experts"] == 4
    assert (cfg["loss.eta1"], cfg["loss.eta2"], cfg["loss.eta3"]) == (1.0, 0.5, 0.5)
    assert cfg["train.counterfactual_mode"] == "learned"
    assert load_config() == cfg


def test_merge_rejects_unknown_keys_and_bad_types():
    with pytest.raises(ConfigError):
        merge(default_config(), {"train.epoch": 3})
    with pytest.raises(ConfigError):
        merge(default_config(), {"train.epochs": "3"})
    with pytest.raises(ConfigError):
        merge(default_config(), {"train.cdal_enabled": 1})
    with pytest.raises(ConfigError):
        merge(default_config(), {"train.epochs": 2.5})
    assert merge(default_config(), {"train.learning_rate": 1})["train.learning_rate"] == 1.0


def test_parse_override():
    assert parse_override("train.epochs=3") == ("train.epochs", 3)
    assert parse_override("train.cdal_enabled=false") == ("train.cdal_enabled", False)
    assert parse_override("train.counterfactual_mode=shuffle") == ("train.counterfactual_mode", "shuffle")
    assert parse_override("aug.scale_lo=0.8") == ("aug.scale_lo", 0.8)
    with pytest.raises(ConfigError):
        parse_override("train.epochs")


def test_precedence_file_then_set_then_seed(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 3, "train.epochs": 5, "train.batch_size": 8}), encoding="utf-8")
    cfg = load_config(path, ["train.epochs=7", "seed=4"], seed=9)
    assert cfg["train.batch_size"] == 8
    assert cfg["train.epochs"] == 7
    assert cfg["seed"] == 9
    assert load_config(path)["seed"] == 3


def test_malformed_or_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"seed\": ", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listing)


@pytest.mark.parametrize("override", [
    "model.n_maps=7",
    "train.counterfactual_mode=inverted",
    "aug.scale_lo=1.2",
    "train.momentum=1.0",
    "loss.eta2=-0.1",
    "train.batch_size=0",
])
def test_cross_key_validation(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_digest_is_stable_and_sensitive():
    cfg = default_config()
    assert config_digest(cfg) == config_digest(dict(reversed(list(cfg.items()))))
    assert len(config_digest(cfg)) == 16
    assert config_digest(cfg) != config_digest(merge(cfg, {"seed": 1}))


def test_describe_keys_lists_every_key():
    text = describe_keys()
    for key in DEFAULTS:
        assert key in text
