"""Per-example SGD training loop with scheduled question interventions.

Each epoch shuffles the train split with a seeded RNG, draws an intervention
coin per example from the schedule, builds the task-specific target, and
applies one SGD step. Baseline modes: "naive" disables interventions and the
abstention machinery entirely; "random_drop"/"random_switch" corrupt questions
with probability p(e) but keep the original answer (naive text augmentation).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nnet
from .curriculum import Schedule, prob
from .errors import (ConfigError, InterventionError, NumericError,
                     TrainingDivergedError)
from .intervene import (DistanceModel, Intervention, InterventionPolicy,
                        intervention_record, perturb, semantic_distance)
from .taskheads import augment_options, build_target
from .worldgen import Dataset, QuestionSpec, make_question

BASELINE_MODES = ("ai", "naive", "random_drop", "random_switch")


@dataclass
class TrainConfig:
    task: str = "oeqa"
    epochs: int = 30
    learning_rate: float = 0.02
    schedule: Schedule = field(default_factory=lambda: Schedule(epochs=30))
    policy: InterventionPolicy = field(default_factory=InterventionPolicy)
    distance: DistanceModel | None = None
    seed: int = 0
    baseline_mode: str = "ai"
    drop_original_correct: bool = False

    def __post_init__(self):
        if self.task not in ("oeqa", "mcqa"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.baseline_mode not in BASELINE_MODES:
            raise ConfigError(f"unknown baseline mode {self.baseline_mode!r}")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1:
            raise ConfigError("need at least one epoch")
        if self.schedule.epochs != self.epochs:
            self.schedule = replace(self.schedule, epochs=self.epochs)


@dataclass
class RunManifest:
    task: str
    seed: int
    baseline_mode: str
    dataset_hash: str
    config: dict
    epochs: list = field(default_factory=list)  # {epoch, p_e, realized_rate, mean_loss}
    checkpoint_hash: str = ""


def train_config_to_dict(cfg: TrainConfig) -> dict:
    dm = cfg.distance
    return {
        "task": cfg.task, "epochs": cfg.epochs, "learning_rate": cfg.learning_rate,
        "seed": cfg.seed, "baseline_mode": cfg.baseline_mode,
        "drop_original_correct": cfg.drop_original_correct,
        "schedule": {"kind": cfg.schedule.kind, "epochs": cfg.schedule.epochs,
                     "p_r": cfg.schedule.p_r, "lam": cfg.schedule.lam,
                     "fixed_p": cfg.schedule.fixed_p},
        "policy": {"displacement_ratio": cfg.policy.displacement_ratio,
                   "crucial_slots": list(cfg.policy.crucial_slots),
                   "synonym_prob": cfg.policy.synonym_prob},
        "distance": None if dm is None else {
            "slot_weights": dict(dm.slot_weights),
            "synonym_distance": dm.synonym_distance,
            "threshold": dm.threshold},
    }


def displacement_pool(instances) -> list:
    """Non-general train questions eligible as displacement sources."""
    return [(inst.id, inst.question) for inst in instances
            if not inst.question.is_general]


def _sample_displacement(q: QuestionSpec, eligible: list, rng):
    if not eligible:
        raise InterventionError("no eligible displacement question in the pool")
    for _ in range(32):
        qid, cand = eligible[int(rng.integers(len(eligible)))]
        if cand != q:
            return cand, Intervention(kind="displacement", source_instance_id=qid)
    raise InterventionError("displacement pool contains no question different from q")


def _drop_slot(q: QuestionSpec, rng) -> QuestionSpec:
    slots = q.slot_map
    if len(slots) < 2:   # a question must keep at least one slot token
        return q
    names = sorted(slots)
    victim = names[int(rng.integers(len(names)))]
    del slots[victim]
    return make_question(q.template, slots)


_SWAPPABLE = ("subject", "attribute", "relation", "ref_action")


def _switch_slots(q: QuestionSpec, rng) -> QuestionSpec:
    slots = q.slot_map
    present = [s for s in _SWAPPABLE if s in slots]
    if len(present) < 2:
        return q
    i, j = rng.choice(len(present), size=2, replace=False)
    a, b = present[int(i)], present[int(j)]
    slots[a], slots[b] = slots[b], slots[a]
    return make_question(q.template, slots)


def train(dataset: Dataset, model_config: nnet.ModelConfig, cfg: TrainConfig,
          intervention_log=None):
    """Run the full training loop; returns (params, RunManifest)."""
    vocab = dataset.config.vocab
    dm = cfg.distance or DistanceModel.from_vocab(vocab)
    schedule = cfg.schedule
    if cfg.baseline_mode == "naive":
        schedule = Schedule(kind="fixed", epochs=cfg.epochs, fixed_p=0.0)
    params = nnet.init_params(model_config,
                              rng=np.random.default_rng(
                                  np.random.SeedSequence([model_config.seed, cfg.seed])))
    instances = dataset.train
    if not instances:
        raise ConfigError("empty train split")
    pool = displacement_pool(instances)
    answer_pool = list(model_config.answer_pool)
    global_options = sorted({tok for inst in instances if inst.options
                             for tok in inst.options.options})
    augmented = [augment_options(inst.options) if inst.options else None
                 for inst in instances]
    answer_idx = [answer_pool.index(inst.answer) for inst in instances]
    ai_mode = cfg.baseline_mode == "ai"

    manifest = RunManifest(task=cfg.task, seed=cfg.seed, baseline_mode=cfg.baseline_mode,
                           dataset_hash=dataset.content_hash,
                           config=train_config_to_dict(cfg))
    log_lines = [] if intervention_log is not None else None

    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        order = rng.permutation(len(instances))
        p_e = prob(schedule, epoch)
        n_intervened = 0
        loss_sum = 0.0
        for idx in order:
            inst = instances[idx]
            question = inst.question
            d = 0.0
            record = None
            if rng.random() < p_e:
                if ai_mode:
                    if rng.random() < cfg.policy.displacement_ratio:
                        question, record = _sample_displacement(question, pool, rng)
                    else:
                        question, record = perturb(question, vocab, cfg.policy, rng)
                    d = semantic_distance(inst.question, question, dm)
                    n_intervened += 1
                    if log_lines is not None:
                        log_lines.append(intervention_record(inst.id, record, d))
                elif cfg.baseline_mode == "random_drop":
                    question = _drop_slot(question, rng)
                    n_intervened += 1
                elif cfg.baseline_mode == "random_switch":
                    question = _switch_slots(question, rng)
                    n_intervened += 1

            try:
                loss, grads = _example_step(cfg, inst, question, record, d, params,
                                            dm, answer_pool, answer_idx[idx],
                                            augmented[idx], global_options,
                                            ai_mode, rng)
            except NumericError as exc:
                raise TrainingDivergedError(
                    f"non-finite values at epoch {epoch}, instance {inst.id}") from exc
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, instance {inst.id}")
            loss_sum += loss
            nnet.apply_grads(params, grads, cfg.learning_rate)

        manifest.epochs.append({
            "epoch": epoch, "p_e": p_e,
            "realized_rate": n_intervened / len(instances),
            "mean_loss": loss_sum / len(instances)})

    manifest.checkpoint_hash = nnet.params_hash(params)
    if intervention_log is not None and log_lines is not None:
        Path(intervention_log).write_text("\n".join(log_lines) + ("\n" if log_lines else ""),
                                          encoding="utf-8")
    return params, manifest


def _example_step(cfg, inst, question, record, d, params, dm, answer_pool,
                  answer_index, augmented_options, global_options, ai_mode, rng):
    """Forward/backward for one training example; returns (loss, grads)."""
    if cfg.task == "oeqa":
        p, p_i, cache = nnet.forward_oeqa(inst.video, question, params)
        if ai_mode:
            loss = nnet.loss_oeqa(p, p_i, answer_index, d)
        else:
            loss = nnet.loss_oeqa_plain(p, answer_index)
        grads = nnet.backward_oeqa(cache, answer_index, d, params,
                                   include_ignorance=ai_mode)
        return loss, grads
    if ai_mode:
        target = build_target(inst, question if record else None, d, dm,
                              task="mcqa", answer_pool=answer_pool,
                              rng=rng, global_pool=global_options,
                              drop_original_correct=cfg.drop_original_correct) \
            if record else None
        if target is None:
            options, tgt_idx = augmented_options, augmented_options.correct_index
        else:
            options, tgt_idx = target.options, target.answer_index
    else:
        options, tgt_idx = inst.options, inst.options.correct_index
    scores, cache = nnet.forward_mcqa(inst.video, question, options, params)
    loss = nnet.loss_mcqa(scores, tgt_idx)
    grads = nnet.backward_mcqa(cache, tgt_idx, params)
    return loss, grads


def train_baseline_augmented(dataset: Dataset, model_config: nnet.ModelConfig,
                             cfg: TrainConfig):
    """Naive text-augmentation baselines (random drop / random switch)."""
    if cfg.baseline_mode not in ("random_drop", "random_switch"):
        raise ConfigError("baseline_mode must be random_drop or random_switch")
    return train(dataset, model_config, cfg)


def save_metrics(manifest: RunManifest, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "p_e", "realized_rate", "mean_loss"])
        writer.writeheader()
        for row in manifest.epochs:
            writer.writerow(row)
