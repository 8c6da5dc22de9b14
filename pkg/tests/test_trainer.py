"""Training loop mechanics: schedules, baselines, determinism, divergence."""

import numpy as np
import pytest

from abstainqa.curriculum import Schedule
from abstainqa.errors import ConfigError, TrainingDivergedError
from abstainqa.intervene import DistanceModel, InterventionPolicy
from abstainqa.nnet import model_config_from_vocab, params_hash
from abstainqa.trainer import (TrainConfig, _drop_slot, _switch_slots,
                               displacement_pool, save_metrics, train,
                               train_baseline_augmented, train_config_to_dict)
from abstainqa.worldgen import WorldConfig, build_dataset, make_question


def small_dataset(**kw):
    base = dict(train_size=300, test_size=50, conflict_size=10, seed=0)
    base.update(kw)
    return build_dataset(WorldConfig(**base))


def small_model(ds, seed=0):
    return model_config_from_vocab(ds.config.vocab, video_dim=64, embed_dim=64,
                                   hidden_dim=24, seed=seed,
                                   featurizer_seed=ds.config.featurizer_seed)


def quick_cfg(**kw):
    base = dict(task="oeqa", epochs=3, learning_rate=0.02,
                schedule=Schedule(kind="quadratic", epochs=3, p_r=0.5), seed=0)
    base.update(kw)
    return TrainConfig(**base)


DS = small_dataset()
MC = small_model(DS)


def test_train_returns_manifest_with_epoch_rows():
    params, manifest = train(DS, MC, quick_cfg())
    assert len(manifest.epochs) == 3
    assert manifest.checkpoint_hash == params_hash(params)
    assert manifest.dataset_hash == DS.content_hash
    for row in manifest.epochs:
        assert 0.0 <= row["realized_rate"] <= 1.0
        assert np.isfinite(row["mean_loss"])
    # realized intervention rate tracks the schedule probability
    for row in manifest.epochs:
        assert abs(row["realized_rate"] - row["p_e"]) < 0.15
    assert manifest.epochs[-1]["p_e"] == 0.0  # quadratic ends at zero


def test_naive_mode_never_intervenes():
    _, manifest = train(DS, MC, quick_cfg(baseline_mode="naive"))
    assert all(row["realized_rate"] == 0.0 for row in manifest.epochs)
    assert all(row["p_e"] == 0.0 for row in manifest.epochs)


def test_training_is_bit_deterministic():
    p1, m1 = train(DS, MC, quick_cfg())
    p2, m2 = train(DS, MC, quick_cfg())
    assert m1.checkpoint_hash == m2.checkpoint_hash
    assert m1.epochs == m2.epochs
    p3, m3 = train(DS, MC, quick_cfg(seed=1))
    assert m3.checkpoint_hash != m1.checkpoint_hash


def test_mcqa_training_runs_and_is_deterministic():
    cfg = quick_cfg(task="mcqa", epochs=2,
                    schedule=Schedule(kind="quadratic", epochs=2, p_r=0.5))
    _, m1 = train(DS, MC, cfg)
    _, m2 = train(DS, MC, cfg)
    assert m1.checkpoint_hash == m2.checkpoint_hash
    assert len(m1.epochs) == 2


def test_divergence_raises_instead_of_propagating_nans():
    with pytest.raises(TrainingDivergedError):
        train(DS, MC, quick_cfg(learning_rate=1e6, epochs=2,
                                schedule=Schedule(kind="quadratic", epochs=2)))


def test_intervention_log_written(tmp_path):
    log = tmp_path / "interventions.jsonl"
    train(DS, MC, quick_cfg(), intervention_log=log)
    import json
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert lines
    assert {l["kind"] for l in lines} <= {"displacement", "perturbation"}
    assert all(0.0 <= l["d"] <= 1.0 for l in lines)


def test_random_drop_and_switch_mechanics():
    rng = np.random.default_rng(0)
    q = make_question("Transition", {"subject": "boy", "attribute": "red",
                                     "relation": "after", "ref_action": "eating"})
    dropped = _drop_slot(q, rng)
    assert len(dropped.slot_map) == len(q.slot_map) - 1
    # single-slot questions are left intact so the encoder never sees
    # an empty slot list
    q_single = make_question("Frame", {"subject": "boy"})
    assert _drop_slot(q_single, rng) == q_single
    switched = _switch_slots(q, rng)
    assert set(switched.slot_map) == set(q.slot_map)
    assert sorted(switched.slot_map.values()) == sorted(q.slot_map.values())
    assert switched != q
    # a single-swappable-slot question is returned unchanged
    q1 = make_question("Frame", {"subject": "boy"})
    assert _switch_slots(q1, rng) == q1


def test_baseline_augmented_entrypoint_validates_mode():
    with pytest.raises(ConfigError):
        train_baseline_augmented(DS, MC, quick_cfg(baseline_mode="ai"))
    _, manifest = train_baseline_augmented(
        DS, MC, quick_cfg(baseline_mode="random_drop", epochs=2,
                          schedule=Schedule(kind="fixed", epochs=2, fixed_p=0.5)))
    assert any(row["realized_rate"] > 0 for row in manifest.epochs)


def test_displacement_pool_excludes_general_questions():
    pool = displacement_pool(DS.train)
    assert pool
    assert all(not q.is_general for _, q in pool)


def test_schedule_epochs_reconciled_with_train_epochs():
    cfg = TrainConfig(epochs=4, schedule=Schedule(kind="linear", epochs=30))
    assert cfg.schedule.epochs == 4


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(task="nope")
    with pytest.raises(ConfigError):
        TrainConfig(baseline_mode="nope")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


def test_train_config_dict_roundtrips_json():
    import json
    cfg = quick_cfg(distance=DistanceModel.from_vocab(DS.config.vocab),
                    policy=InterventionPolicy(displacement_ratio=0.7))
    blob = json.dumps(train_config_to_dict(cfg), sort_keys=True)
    back = json.loads(blob)
    assert back["policy"]["displacement_ratio"] == 0.7
    assert back["schedule"]["kind"] == "quadratic"


def test_save_metrics_csv(tmp_path):
    _, manifest = train(DS, MC, quick_cfg(epochs=2,
                                          schedule=Schedule(kind="quadratic", epochs=2)))
    path = tmp_path / "metrics.csv"
    save_metrics(manifest, path)
    import csv
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["epoch"] == "1"
    assert float(rows[1]["p_e"]) == 0.0
