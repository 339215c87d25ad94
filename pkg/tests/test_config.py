import json

import pytest

from fastpci.config import Config, Flags, LossWeights, ModelConfig, TrainConfig
from fastpci.errors import ArgumentError


def test_defaults():
    cfg = Config()
    assert cfg.model.level_sizes() == [1024, 256, 32]
    assert cfg.model.level_sizes(8192) == [8192, 2048, 256]
    assert (cfg.train.lr, cfg.train.weight_decay, cfg.train.batch_size) == (1e-3, 1e-4, 4)
    assert cfg.train.lr_halving_period_epochs == 80
    assert cfg.loss.alpha == (0.05, 0.1, 0.2)


def test_json_round_trip(tmp_path):
    cfg = Config()
    cfg.model.flags.attention_mode = "self_attention"
    cfg.loss = LossWeights(cd2=False)
    cfg.save(tmp_path / "c.json")
    raw = json.loads((tmp_path / "c.json").read_text())
    assert raw["loss"]["alpha0"] == 0.05 and raw["model"]["flags"]["structure_branch"] is True
    back = Config.load(tmp_path / "c.json")
    assert back.to_json() == cfg.to_json()


def test_attention_alias():
    assert Flags(attention_mode="self").attention_mode == "self_attention"
    with pytest.raises(ArgumentError):
        ModelConfig(flags=Flags(attention_mode="sideways"))


def test_validation():
    with pytest.raises(ArgumentError):
        ModelConfig(divisors=(1, 32, 4))
    with pytest.raises(ArgumentError):
        ModelConfig(points=16)
    with pytest.raises(ArgumentError):
        TrainConfig(lr=0.0)
    with pytest.raises(ArgumentError):
        Config.from_json({"bogus": {}})
    with pytest.raises(ArgumentError):
        Config.from_json({"model": {"widths": 3}})
