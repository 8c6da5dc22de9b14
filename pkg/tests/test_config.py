"""Config loading, dotted-path overrides, and section builders."""

import json

import pytest

from abstainqa.config import (apply_overrides, build_distance,
                              build_eval_config, build_policy, build_schedule,
                              build_train_config, build_world_config,
                              default_config, load_config)
from abstainqa.errors import ConfigError


def test_defaults_build_every_section():
    cfg = default_config()
    world = build_world_config(cfg)
    assert world.train_size == 8000
    assert world.binding_scale == 0.5
    assert tuple(world.template_mix) == (0.25, 0.25, 0.5)
    assert world.bias.forced_action == "crying"
    sched = build_schedule(cfg, epochs=30)
    assert (sched.kind, sched.p_r) == ("quadratic", 0.3)
    pol = build_policy(cfg)
    assert pol.displacement_ratio == 0.5
    dm = build_distance(cfg, world.vocab)
    assert dm.threshold == 0.2
    tc = build_train_config(cfg, world.vocab)
    assert tc.task == "oeqa" and tc.epochs == 30
    assert tc.schedule.epochs == tc.epochs
    ec = build_eval_config(cfg)
    assert ec.admission_threshold == 0.5


def test_load_config_merges_file_over_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"train": {"epochs": 5},
                                "dataset": {"train_size": 100}}))
    cfg = load_config(path)
    assert cfg["train"]["epochs"] == 5
    assert cfg["train"]["task"] == "oeqa"          # untouched default
    assert cfg["dataset"]["train_size"] == 100
    assert cfg["dataset"]["test_size"] == 2000     # untouched default


def test_load_config_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1,2]")
    with pytest.raises(ConfigError):
        load_config(arr)


def test_apply_overrides_parses_json_values():
    cfg = default_config()
    out = apply_overrides(cfg, ["train.epochs=7",
                                "schedule.kind=linear",
                                "dataset.bias.strength=0.5",
                                "policy.crucial_slots=[\"subject\"]"])
    assert out["train"]["epochs"] == 7
    assert out["schedule"]["kind"] == "linear"          # bare word -> string
    assert out["dataset"]["bias"]["strength"] == 0.5
    assert out["policy"]["crucial_slots"] == ["subject"]
    assert cfg["train"]["epochs"] == 30                 # original untouched


def test_apply_overrides_rejects_malformed_item():
    with pytest.raises(ConfigError):
        apply_overrides(default_config(), ["train.epochs"])


def test_custom_vocab_section():
    cfg = default_config()
    cfg["dataset"]["vocab"] = {
        "subjects": ["boy", "girl", "dog", "cat"],
        "attributes": ["red", "blue"],
        "actions": ["dancing", "jumping", "crying"],
        "synonym_pairs": []}
    world = build_world_config(cfg)
    assert world.vocab.subjects == ("boy", "girl", "dog", "cat")
    assert world.vocab.synonym_pairs == ()
