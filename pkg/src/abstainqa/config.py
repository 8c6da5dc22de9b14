"""Hierarchical JSON config with dotted-path CLI overrides.

One file drives every subcommand; sections: dataset, model, schedule, policy,
distance, train, eval, sweep. `apply_overrides` implements `--set a.b.c=value`
with JSON-parsed values (bare words fall back to strings).
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .curriculum import Schedule
from .errors import ConfigError
from .evalharness import EvalConfig
from .intervene import DEFAULT_SLOT_WEIGHTS, DistanceModel, InterventionPolicy
from .nnet import ModelConfig, model_config_from_vocab
from .trainer import TrainConfig
from .worldgen import BiasSpec, Vocab, WorldConfig

DEFAULTS = {
    "dataset": {
        "train_size": 8000, "test_size": 2000, "conflict_size": 500,
        "k_min": 1, "k_max": 4, "video_dim": 64, "noise_sigma": 0.1,
        "binding_scale": 0.5, "template_mix": [0.25, 0.25, 0.5],
        "general_fraction": 0.25, "options_n": 5,
        "seed": 0, "featurizer_seed": 1,
        "vocab": None,  # null -> built-in default vocabulary
        "bias": {"target_template": "Frame", "target_subject": "baby",
                 "forced_action": "crying", "strength": 0.9},
    },
    "model": {"embed_dim": 64, "hidden_dim": 128, "init_scale": 0.1, "seed": 0},
    "schedule": {"kind": "quadratic", "p_r": 0.3, "lambda": 5.0, "fixed_p": 0.25},
    "policy": {"displacement_ratio": 0.5,
               "crucial_slots": ["subject", "attribute", "count", "relation"],
               "synonym_prob": 0.15},
    "distance": {"slot_weights": dict(DEFAULT_SLOT_WEIGHTS),
                 "synonym_distance": 0.05, "threshold": 0.2},
    "train": {"task": "oeqa", "epochs": 30, "learning_rate": 0.02, "seed": 0,
              "baseline_mode": "ai", "drop_original_correct": False},
    "eval": {"admission_threshold": 0.5, "include_not_given_in_clean_test": True,
             "seed": 0},
    "sweep": {"axis": "p_r", "grid": None, "seeds": [0, 1, 2]},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None) -> dict:
    cfg = default_config()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config not found: {p}")
        try:
            loaded = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {p}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be an object: {p}")
        cfg = _deep_merge(cfg, loaded)
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        keys = path.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into {key!r} in override {item!r}")
        node[keys[-1]] = value
    return cfg


# ---------------------------------------------------------------------------
# Section -> object builders
# ---------------------------------------------------------------------------

def build_world_config(cfg: dict) -> WorldConfig:
    d = dict(cfg["dataset"])
    vocab_dict = d.pop("vocab", None)
    vocab = Vocab() if vocab_dict is None else Vocab(
        subjects=tuple(vocab_dict["subjects"]),
        attributes=tuple(vocab_dict["attributes"]),
        actions=tuple(vocab_dict["actions"]),
        synonym_pairs=tuple(tuple(p) for p in vocab_dict.get("synonym_pairs", ())))
    bias = BiasSpec(**d.pop("bias"))
    return WorldConfig(vocab=vocab, bias=bias, **d)


def build_model_config(cfg: dict, vocab: Vocab, video_dim: int) -> ModelConfig:
    m = cfg["model"]
    return model_config_from_vocab(vocab, video_dim=video_dim,
                                   embed_dim=m["embed_dim"], hidden_dim=m["hidden_dim"],
                                   init_scale=m["init_scale"], seed=m["seed"],
                                   featurizer_seed=cfg["dataset"]["featurizer_seed"])


def build_schedule(cfg: dict, epochs: int) -> Schedule:
    s = cfg["schedule"]
    return Schedule(kind=s["kind"], epochs=epochs, p_r=s["p_r"],
                    lam=s["lambda"], fixed_p=s["fixed_p"])


def build_policy(cfg: dict) -> InterventionPolicy:
    p = cfg["policy"]
    return InterventionPolicy(displacement_ratio=p["displacement_ratio"],
                              crucial_slots=tuple(p["crucial_slots"]),
                              synonym_prob=p["synonym_prob"])


def build_distance(cfg: dict, vocab: Vocab) -> DistanceModel:
    d = cfg["distance"]
    return DistanceModel.from_vocab(vocab, slot_weights=dict(d["slot_weights"]),
                                    synonym_distance=d["synonym_distance"],
                                    threshold=d["threshold"])


def build_train_config(cfg: dict, vocab: Vocab) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(task=t["task"], epochs=t["epochs"],
                       learning_rate=t["learning_rate"],
                       schedule=build_schedule(cfg, t["epochs"]),
                       policy=build_policy(cfg),
                       distance=build_distance(cfg, vocab),
                       seed=t["seed"], baseline_mode=t["baseline_mode"],
                       drop_original_correct=t["drop_original_correct"])


def build_eval_config(cfg: dict) -> EvalConfig:
    e = cfg["eval"]
    return EvalConfig(admission_threshold=e["admission_threshold"],
                      include_not_given_in_clean_test=e["include_not_given_in_clean_test"],
                      seed=e["seed"])
