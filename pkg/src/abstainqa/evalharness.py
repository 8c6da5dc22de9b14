"""Metrics and experiment drivers: clean accuracy, ignorance admission,
unknown-selection rate, bias-breaking comparisons, and hyperparameter sweeps.

Evaluation never mutates model parameters. Test-time perturbations are
resampled until their semantic distance clears the threshold, so admission is
always measured in the ignorance regime.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import nnet
from .curriculum import Schedule
from .errors import ConfigError, InterventionError
from .intervene import DistanceModel, InterventionPolicy, perturb, semantic_distance
from .taskheads import NOT_GIVEN, augment_options, intervened_options
from .trainer import TrainConfig, _sample_displacement, displacement_pool, train
from .worldgen import Dataset, derive_answer, stable_hash

KINDS = ("displacement", "perturbation")


@dataclass
class EvalConfig:
    admission_threshold: float = 0.5
    include_not_given_in_clean_test: bool = True
    kinds: tuple = KINDS
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.admission_threshold < 1.0:
            raise ConfigError("admission threshold must lie in (0, 1)")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _oeqa_batch(params: nnet.ModelParams, instances):
    """Vectorized open-ended forward over a split: (answer argmax, p_i)."""
    qm = np.stack([nnet.encode_question(inst.question, params)[0] for inst in instances])
    vm = np.stack([inst.video for inst in instances])
    X = np.hstack([vm, qm, vm * qm])
    Z = np.maximum(X @ params.W1.T + params.b1, 0.0)
    H = Z @ params.W2.T + params.b2
    return H[:, :-1].argmax(axis=1), _sigmoid(H[:, -1])


def clean_accuracy(params: nnet.ModelParams, instances, task: str,
                   eval_cfg: EvalConfig) -> float:
    """Fraction of correct answers on unintervened questions.

    Open-ended: argmax over the answer logits, abstention logit ignored.
    Multi-choice: argmax over option scores; NOT_GIVEN is present iff
    include_not_given_in_clean_test.
    """
    if not instances:
        raise ConfigError("empty evaluation split")
    pool = list(params.config.answer_pool)
    if task == "oeqa":
        preds, _ = _oeqa_batch(params, instances)
        answers = np.array([pool.index(inst.answer) for inst in instances])
        return float((preds == answers).mean())
    correct = 0
    for inst in instances:
        options = (augment_options(inst.options)
                   if eval_cfg.include_not_given_in_clean_test else inst.options)
        scores, _ = nnet.forward_mcqa(inst.video, inst.question, options, params)
        correct += nnet.predict_option(scores) == options.correct_index
    return correct / len(instances)


def _test_time_intervention(inst, kind, pool, vocab, policy, dm, rng):
    if kind == "displacement":
        q, _ = _sample_displacement(inst.question, pool, rng)
        return q, semantic_distance(inst.question, q, dm)
    for _ in range(100):
        q, _ = perturb(inst.question, vocab, policy, rng)
        d = semantic_distance(inst.question, q, dm)
        if d >= dm.threshold:
            return q, d
    raise InterventionError("could not draw an above-threshold perturbation")


def admission_accuracy(params: nnet.ModelParams, instances, kind: str, task: str,
                       eval_cfg: EvalConfig, *, vocab, dm: DistanceModel,
                       policy: InterventionPolicy | None = None,
                       global_pool=None) -> float:
    """Intervene every test question with `kind` and score successful abstention.

    Multi-choice success: picking NOT_GIVEN from the resampled option set.
    Open-ended success: abstention probability strictly above the threshold.
    """
    if not instances:
        raise ConfigError("empty evaluation split")
    if kind not in KINDS:
        raise ConfigError(f"unknown intervention kind {kind!r}")
    policy = policy or InterventionPolicy()
    rng = np.random.default_rng(np.random.SeedSequence([eval_cfg.seed, stable_hash(kind)]))
    pool = displacement_pool(instances)
    if global_pool is None:
        global_pool = sorted({tok for inst in instances if inst.options
                              for tok in inst.options.options})
    successes = 0
    for inst in instances:
        q, d = _test_time_intervention(inst, kind, pool, vocab, policy, dm, rng)
        if task == "oeqa":
            _, p_i, _ = nnet.forward_oeqa(inst.video, q, params)
            successes += p_i > eval_cfg.admission_threshold
        else:
            reject = []
            derivable = derive_answer(inst.scene, q)
            if derivable is not None:
                reject.append(derivable)
            options = intervened_options(inst.options, global_pool, rng, reject=reject)
            scores, _ = nnet.forward_mcqa(inst.video, q, options, params)
            successes += nnet.predict_option(scores) == options.not_given_index
    return successes / len(instances)


def unknown_rate(params: nnet.ModelParams, instances, eval_cfg: EvalConfig) -> float:
    """Fraction of clean multi-choice questions answered with NOT_GIVEN."""
    if not instances:
        raise ConfigError("empty evaluation split")
    hits = 0
    for inst in instances:
        if inst.options is None:
            raise ConfigError("unknown_rate needs multi-choice option sets")
        options = augment_options(inst.options)
        scores, _ = nnet.forward_mcqa(inst.video, inst.question, options, params)
        hits += nnet.predict_option(scores) == options.not_given_index
    return hits / len(instances)


def shortcut_rate(params: nnet.ModelParams, instances, forced_action: str,
                  task: str, eval_cfg: EvalConfig) -> float:
    """Fraction of (conflict) questions answered with the planted forced action."""
    if not instances:
        raise ConfigError("empty evaluation split")
    pool = list(params.config.answer_pool)
    if task == "oeqa":
        preds, _ = _oeqa_batch(params, instances)
        return float((preds == pool.index(forced_action)).mean())
    hits = 0
    for inst in instances:
        options = (augment_options(inst.options)
                   if eval_cfg.include_not_given_in_clean_test else inst.options)
        scores, _ = nnet.forward_mcqa(inst.video, inst.question, options, params)
        hits += options.options[nnet.predict_option(scores)] == forced_action
    return hits / len(instances)


def sign_test_pvalue(wins: int, losses: int) -> float:
    """Two-sided exact sign test over paired comparisons (ties dropped)."""
    n = wins + losses
    if n == 0:
        return 1.0
    k = max(wins, losses)
    tail = sum(math.comb(n, i) for i in range(k, n + 1)) / 2**n
    return min(1.0, 2.0 * tail)


def evaluate_run(params, dataset: Dataset, task: str, eval_cfg: EvalConfig,
                 dm: DistanceModel, policy: InterventionPolicy) -> dict:
    vocab = dataset.config.vocab
    out = {
        "clean_accuracy": clean_accuracy(params, dataset.test, task, eval_cfg),
        "conflict_accuracy": clean_accuracy(params, dataset.test_conflict, task, eval_cfg),
        "shortcut_rate": shortcut_rate(params, dataset.test_conflict,
                                       dataset.config.bias.forced_action, task, eval_cfg),
    }
    for kind in eval_cfg.kinds:
        out[f"admission_{kind}"] = admission_accuracy(
            params, dataset.test, kind, task, eval_cfg,
            vocab=vocab, dm=dm, policy=policy)
    if task == "mcqa":
        out["unknown_rate"] = unknown_rate(params, dataset.test, eval_cfg)
    return out


def bias_breaking_experiment(dataset: Dataset, model_config, base_cfg: TrainConfig,
                             seeds, eval_cfg: EvalConfig | None = None) -> dict:
    """Train the full framework and the naive baseline on identical data/seeds
    and compare conflict-split behavior."""
    if len(dataset.test_conflict) == 0:
        raise ConfigError("bias-breaking experiment needs a non-empty conflict split")
    eval_cfg = eval_cfg or EvalConfig()
    dm = base_cfg.distance or DistanceModel.from_vocab(dataset.config.vocab)
    rows = []
    for seed in seeds:
        for mode in ("ai", "naive"):
            cfg = replace(base_cfg, seed=seed, baseline_mode=mode, distance=dm)
            params, manifest = train(dataset, model_config, cfg)
            row = {"seed": seed, "mode": mode,
                   "checkpoint_hash": manifest.checkpoint_hash}
            row.update(evaluate_run(params, dataset, cfg.task, eval_cfg, dm, cfg.policy))
            rows.append(row)
    by = {(r["seed"], r["mode"]): r for r in rows}
    ai_wins = sum(by[(s, "ai")]["conflict_accuracy"] > by[(s, "naive")]["conflict_accuracy"]
                  for s in seeds)
    ai_losses = sum(by[(s, "ai")]["conflict_accuracy"] < by[(s, "naive")]["conflict_accuracy"]
                    for s in seeds)
    summary = {
        "seeds": list(seeds),
        "ai_conflict_wins": ai_wins,
        "sign_test_pvalue": sign_test_pvalue(ai_wins, ai_losses),
        "mean_conflict_accuracy": {
            m: float(np.mean([by[(s, m)]["conflict_accuracy"] for s in seeds]))
            for m in ("ai", "naive")},
        "mean_clean_accuracy": {
            m: float(np.mean([by[(s, m)]["clean_accuracy"] for s in seeds]))
            for m in ("ai", "naive")},
        "mean_shortcut_rate": {
            m: float(np.mean([by[(s, m)]["shortcut_rate"] for s in seeds]))
            for m in ("ai", "naive")},
    }
    return {"rows": rows, "summary": summary}


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

DEFAULT_GRIDS = {
    "p_r": (0.1, 0.3, 0.5, 0.7),
    "displacement_ratio": (0.0, 0.3, 0.5, 0.7, 1.0),
    "schedule": ("fixed:0.25", "fixed:0.5", "fixed:0.75",
                 "linear", "exponential", "quadratic"),
}

_WORKER_STATE: dict = {}


def _apply_axis(cfg: TrainConfig, axis: str, value) -> TrainConfig:
    if axis == "p_r":
        return replace(cfg, schedule=replace(cfg.schedule, p_r=float(value)))
    if axis == "displacement_ratio":
        return replace(cfg, policy=replace(cfg.policy, displacement_ratio=float(value)))
    if axis == "schedule":
        spec = str(value)
        if spec.startswith("fixed:"):
            sched = Schedule(kind="fixed", epochs=cfg.epochs,
                             fixed_p=float(spec.split(":", 1)[1]))
        else:
            sched = replace(cfg.schedule, kind=spec, epochs=cfg.epochs)
        return replace(cfg, schedule=sched)
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _init_sweep_worker(dataset, model_config, eval_cfg):
    _WORKER_STATE.update(dataset=dataset, model_config=model_config, eval_cfg=eval_cfg)


def _run_sweep_point(job):
    grid_index, axis, value, seed, cfg = job
    dataset = _WORKER_STATE["dataset"]
    model_config = _WORKER_STATE["model_config"]
    eval_cfg = _WORKER_STATE["eval_cfg"]
    dm = cfg.distance or DistanceModel.from_vocab(dataset.config.vocab)
    cfg = replace(cfg, distance=dm)
    params, manifest = train(dataset, model_config, cfg)
    row = {"grid_index": grid_index, "axis": axis, "value": value, "seed": seed,
           "checkpoint_hash": manifest.checkpoint_hash}
    row.update(evaluate_run(params, dataset, cfg.task, eval_cfg, dm, cfg.policy))
    return row


def sweep(axis: str, grid, dataset: Dataset, model_config, base_cfg: TrainConfig,
          seeds=(0, 1, 2), eval_cfg: EvalConfig | None = None, jobs: int = 1) -> list:
    """Train one run per grid point per seed; rows are ordered by grid index."""
    grid = list(grid) if grid is not None else list(DEFAULT_GRIDS[axis])
    if not grid:
        raise ConfigError("sweep grid must be non-empty")
    eval_cfg = eval_cfg or EvalConfig()
    jobs_list = [(gi, axis, value, seed, replace(_apply_axis(base_cfg, axis, value), seed=seed))
                 for gi, value in enumerate(grid) for seed in seeds]
    if jobs <= 1:
        _init_sweep_worker(dataset, model_config, eval_cfg)
        rows = [_run_sweep_point(job) for job in jobs_list]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_sweep_worker,
                                 initargs=(dataset, model_config, eval_cfg)) as pool:
            rows = list(pool.map(_run_sweep_point, jobs_list))
    rows.sort(key=lambda r: (r["grid_index"], r["seed"]))
    return rows


def write_rows_csv(rows: list, path):
    if not rows:
        raise ConfigError("no rows to write")
    fields = sorted({k for row in rows for k in row})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
