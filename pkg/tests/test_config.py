import json

import pytest

from isgraph.config import ConfigError, RunConfig, apply_overrides, from_dict, load_config, with_overrides


def test_defaults_round_trip_through_dict():
    cfg = RunConfig()
    assert from_dict(cfg.to_dict()) == cfg
    assert from_dict(json.loads(json.dumps(cfg.to_dict()))).digest() == cfg.digest()


def test_overrides_parse_json_and_strings():
    cfg = apply_overrides(RunConfig(), ["isg.k_dsg=12", "isg.distance=feature", "planner.post_optimize=false", "seed=4"])
    assert cfg.isg.k_dsg == 12 and cfg.isg.distance == "feature"
    assert cfg.planner.post_optimize is False and cfg.seed == 4
    assert cfg.digest() != RunConfig().digest()
    assert with_overrides(RunConfig(), {"isg.k_dsg": 12}).isg.k_dsg == 12


def test_integers_coerce_to_float_fields():
    cfg = apply_overrides(RunConfig(), ["planner.weight=3"])
    assert isinstance(cfg.planner.weight, float) and cfg.planner.weight == 3.0


@pytest.mark.parametrize(
    "item",
    ["isg.nope=1", "nope.k=1", "isg=1", "isg.k_dsg=1.5", "isg.k_dsg=true", "planner.post_optimize=1", "isg.distance=3", "justtext"],
)
def test_bad_overrides_raise(item):
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), [item])


def test_validation_errors_become_config_errors():
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["isg.aggregation=sum"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ['data.mix={"chaos": 1}'])
    with pytest.raises(ConfigError):
        from_dict({"extra": {}})


def test_load_config(tmp_path):
    assert load_config(None) == RunConfig()
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 2, "train": {"epochs": 1}}))
    cfg = load_config(p)
    assert cfg.seed == 2 and cfg.train.epochs == 1
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
