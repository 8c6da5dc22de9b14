"""Evaluation metrics, paired sign test, and sweep plumbing."""

import numpy as np
import pytest

from abstainqa.curriculum import Schedule
from abstainqa.errors import ConfigError
from abstainqa.evalharness import (DEFAULT_GRIDS, EvalConfig,
                                   admission_accuracy, bias_breaking_experiment,
                                   clean_accuracy, evaluate_run,
                                   shortcut_rate, sign_test_pvalue, sweep,
                                   unknown_rate, write_rows_csv)
from abstainqa.intervene import DistanceModel, InterventionPolicy
from abstainqa.nnet import init_params, model_config_from_vocab
from abstainqa.trainer import TrainConfig
from abstainqa.worldgen import WorldConfig, build_dataset

WC = WorldConfig(train_size=300, test_size=120, conflict_size=20, seed=0)
DS = build_dataset(WC)
MC = model_config_from_vocab(WC.vocab, video_dim=64, embed_dim=64, hidden_dim=24,
                             seed=0, featurizer_seed=WC.featurizer_seed)
DM = DistanceModel.from_vocab(WC.vocab)
POLICY = InterventionPolicy()
EC = EvalConfig()


def zero_model():
    # zero heads: uniform answers, abstention probability exactly 0.5
    return init_params(MC)


def test_eval_config_threshold_validation():
    with pytest.raises(ConfigError):
        EvalConfig(admission_threshold=0.0)
    with pytest.raises(ConfigError):
        EvalConfig(admission_threshold=1.0)


def test_untrained_model_oeqa_baselines():
    params = zero_model()
    acc = clean_accuracy(params, DS.test, "oeqa", EC)
    # uniform logits: argmax ties resolve to class 0, so accuracy equals the
    # empirical frequency of the first action in the answer pool
    first = MC.answer_pool[0]
    freq = sum(i.answer == first for i in DS.test) / len(DS.test)
    assert acc == pytest.approx(freq)
    # abstention sits exactly at 0.5, below the strict threshold
    for kind in ("displacement", "perturbation"):
        assert admission_accuracy(params, DS.test, kind, "oeqa", EC,
                                  vocab=WC.vocab, dm=DM, policy=POLICY) == 0.0


def test_admission_rejects_unknown_kind_and_empty_split():
    params = zero_model()
    with pytest.raises(ConfigError):
        admission_accuracy(params, DS.test, "zap", "oeqa", EC,
                           vocab=WC.vocab, dm=DM)
    with pytest.raises(ConfigError):
        clean_accuracy(params, [], "oeqa", EC)
    with pytest.raises(ConfigError):
        unknown_rate(params, [], EC)


def test_mcqa_metrics_run_on_untrained_model():
    params = zero_model()
    acc = clean_accuracy(params, DS.test[:40], "mcqa", EC)
    assert 0.0 <= acc <= 1.0
    assert 0.0 <= unknown_rate(params, DS.test[:40], EC) <= 1.0
    adm = admission_accuracy(params, DS.test[:40], "displacement", "mcqa", EC,
                             vocab=WC.vocab, dm=DM, policy=POLICY)
    assert 0.0 <= adm <= 1.0


def test_shortcut_rate_counts_forced_action_predictions():
    params = zero_model()
    # uniform logits predict the first pool entry everywhere
    assert shortcut_rate(params, DS.test_conflict, MC.answer_pool[0],
                         "oeqa", EC) == 1.0
    assert shortcut_rate(params, DS.test_conflict, MC.answer_pool[1],
                         "oeqa", EC) == 0.0


def test_evaluate_run_reports_all_metrics():
    params = zero_model()
    out = evaluate_run(params, DS, "oeqa", EC, DM, POLICY)
    assert set(out) == {"clean_accuracy", "conflict_accuracy", "shortcut_rate",
                        "admission_displacement", "admission_perturbation"}
    out = evaluate_run(params, DS, "mcqa", EC, DM, POLICY)
    assert "unknown_rate" in out


def test_admission_is_deterministic_given_eval_seed():
    params = zero_model()
    a = admission_accuracy(params, DS.test, "perturbation", "oeqa", EC,
                           vocab=WC.vocab, dm=DM, policy=POLICY)
    b = admission_accuracy(params, DS.test, "perturbation", "oeqa", EC,
                           vocab=WC.vocab, dm=DM, policy=POLICY)
    assert a == b


# ---------------------------------------------------------------------------
# Sign test
# ---------------------------------------------------------------------------

def test_sign_test_exact_values():
    assert sign_test_pvalue(0, 0) == 1.0
    assert sign_test_pvalue(5, 0) == pytest.approx(2 * 0.5**5)
    assert sign_test_pvalue(0, 5) == pytest.approx(2 * 0.5**5)
    assert sign_test_pvalue(4, 1) == pytest.approx(2 * (5 + 1) * 0.5**5)
    assert sign_test_pvalue(3, 3) == 1.0
    assert sign_test_pvalue(1, 1) == 1.0


def test_sign_test_symmetry_and_bounds():
    for w in range(6):
        for l in range(6):
            p = sign_test_pvalue(w, l)
            assert 0.0 < p <= 1.0
            assert p == sign_test_pvalue(l, w)


# ---------------------------------------------------------------------------
# Experiment drivers (tiny scale)
# ---------------------------------------------------------------------------

def tiny_cfg(epochs=2):
    return TrainConfig(task="oeqa", epochs=epochs, learning_rate=0.02,
                       schedule=Schedule(kind="quadratic", epochs=epochs, p_r=0.5),
                       policy=POLICY, distance=DM, seed=0)


def test_bias_breaking_experiment_structure():
    out = bias_breaking_experiment(DS, MC, tiny_cfg(), seeds=(0, 1))
    assert len(out["rows"]) == 4
    modes = {(r["seed"], r["mode"]) for r in out["rows"]}
    assert modes == {(0, "ai"), (0, "naive"), (1, "ai"), (1, "naive")}
    s = out["summary"]
    assert s["ai_conflict_wins"] + 0 <= 2
    assert 0.0 < s["sign_test_pvalue"] <= 1.0
    assert set(s["mean_conflict_accuracy"]) == {"ai", "naive"}


def test_bias_breaking_needs_conflict_split():
    import dataclasses
    empty = dataclasses.replace(DS, test_conflict=[])
    with pytest.raises(ConfigError):
        bias_breaking_experiment(empty, MC, tiny_cfg(), seeds=(0,))


def test_sweep_rows_cover_grid_and_seeds(tmp_path):
    rows = sweep("p_r", (0.0, 0.5), DS, MC, tiny_cfg(), seeds=(0, 1), jobs=1)
    assert len(rows) == 4
    assert [(r["value"], r["seed"]) for r in rows] == [
        (0.0, 0), (0.0, 1), (0.5, 0), (0.5, 1)]
    assert all("clean_accuracy" in r and "checkpoint_hash" in r for r in rows)
    path = tmp_path / "rows.csv"
    write_rows_csv(rows, path)
    import csv
    with open(path, newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 4


def test_sweep_schedule_axis_parses_fixed_points():
    rows = sweep("schedule", ("fixed:0.75", "linear"), DS, MC, tiny_cfg(),
                 seeds=(0,), jobs=1)
    assert [r["value"] for r in rows] == ["fixed:0.75", "linear"]


def test_sweep_rejects_unknown_axis():
    with pytest.raises(ConfigError):
        sweep("nope", (1,), DS, MC, tiny_cfg(), seeds=(0,), jobs=1)


def test_default_grids_present():
    assert set(DEFAULT_GRIDS) == {"p_r", "displacement_ratio", "schedule"}
    assert "quadratic" in DEFAULT_GRIDS["schedule"]
