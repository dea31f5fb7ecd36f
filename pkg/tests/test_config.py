import json

import pytest

from mixformer.block import ConfigError
from mixformer.config import env_seed, load_model_config, load_train_config, parse_train_config
from mixformer.training import MICRO_MODEL


def test_defaults_use_micro_model(monkeypatch):
    monkeypatch.delenv("MIXFORMER_SEED", raising=False)
    model, train, data = parse_train_config({})
    assert model == MICRO_MODEL
    assert train.seed == 0 and data.seed == 0 and data.num_classes == 4


def test_env_seed_fallback(monkeypatch):
    monkeypatch.setenv("MIXFORMER_SEED", "17")
    assert env_seed() == 17
    _, train, data = parse_train_config({"train": {"steps": 3}})
    assert train.seed == 17 and data.seed == 17
    _, train, _ = parse_train_config({"train": {"seed": 2}})
    assert train.seed == 2
    monkeypatch.setenv("MIXFORMER_SEED", "abc")
    with pytest.raises(ConfigError):
        env_seed()


@pytest.mark.parametrize(
    "data",
    [{"optimizer": {}}, {"train": {"learning_rate": 1}}, {"data": {"colour": 1}}, {"model": {"stages": 3}},
     {"train": {"lr": -1}}],
)
def test_unknown_or_invalid_keys(data):
    with pytest.raises(ConfigError):
        parse_train_config(data)


def test_files(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"model": MICRO_MODEL.to_dict(), "train": {"steps": 5, "seed": 1}}))
    model, train, _ = load_train_config(path)
    assert model == MICRO_MODEL and train.steps == 5
    model_path = tmp_path / "model.json"
    model_path.write_text(json.dumps({"base_channels": 8, "blocks": [1, 1, 1, 1], "heads": [1, 1, 2, 2]}))
    assert load_model_config(model_path).stage_dims == [8, 16, 32, 64]
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_train_config(bad)
