"""Command-line entry point.

Subcommands: gen, train, eval, sweep, gradcheck, report. Exit codes are a
stable contract: 0 success, 1 usage/config error, 2 runtime error. Every
artifact directory receives the resolved config and seeds for auditability.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import evalharness, nnet, report, trainer, worldgen
from .errors import AbstainQAError, ConfigError

OUT_ROOT_ENV = "ABSTAINQA_OUT"


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs")) / default_name


def _resolved_config(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    cfg = cfgmod.apply_overrides(cfg, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        cfg["dataset"]["seed"] = args.seed
        cfg["train"]["seed"] = args.seed
        cfg["eval"]["seed"] = args.seed
    return cfg


def _write_json(path: Path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_gen(args) -> int:
    cfg = _resolved_config(args)
    world = cfgmod.build_world_config(cfg)
    dataset = worldgen.build_dataset(world)
    out = _out_dir(args, "data")
    manifest = worldgen.save_dataset(dataset, out)
    _write_json(out / "resolved_config.json", cfg)
    print(f"wrote dataset to {out} (hash {manifest['content_hash'][:12]})")
    return 0


def _load_data(args) -> worldgen.Dataset:
    if not args.data or not Path(args.data).exists():
        raise UsageError(f"dataset directory not found: {args.data}")
    return worldgen.load_dataset(args.data)


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    dataset = _load_data(args)
    vocab = dataset.config.vocab
    model_config = cfgmod.build_model_config(cfg, vocab, dataset.config.video_dim)
    train_cfg = cfgmod.build_train_config(cfg, vocab)
    out = _out_dir(args, "train")
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "interventions.jsonl" if args.log_interventions else None
    params, manifest = trainer.train(dataset, model_config, train_cfg,
                                     intervention_log=log_path)
    nnet.save_params(params, out / "checkpoint.json")
    trainer.save_metrics(manifest, out / "metrics.csv")
    _write_json(out / "run_manifest.json", {
        "task": manifest.task, "seed": manifest.seed,
        "baseline_mode": manifest.baseline_mode,
        "dataset_hash": manifest.dataset_hash,
        "checkpoint_hash": manifest.checkpoint_hash,
        "config": manifest.config, "epochs": manifest.epochs})
    _write_json(out / "resolved_config.json", cfg)
    print(f"trained {manifest.task} model -> {out} "
          f"(checkpoint {manifest.checkpoint_hash[:12]})")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolved_config(args)
    dataset = _load_data(args)
    if not args.checkpoint or not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    params = nnet.load_params(args.checkpoint)
    vocab = dataset.config.vocab
    eval_cfg = cfgmod.build_eval_config(cfg)
    dm = cfgmod.build_distance(cfg, vocab)
    policy = cfgmod.build_policy(cfg)
    metrics = evalharness.evaluate_run(params, dataset, cfg["train"]["task"],
                                       eval_cfg, dm, policy)
    out = _out_dir(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval_report.json", {
        "task": cfg["train"]["task"], "metrics": metrics,
        "eval_seed": eval_cfg.seed, "dataset_hash": dataset.content_hash,
        "config": cfg})
    evalharness.write_rows_csv([{"metric": k, "value": v} for k, v in sorted(metrics.items())],
                               out / "eval_report.csv")
    for key, value in sorted(metrics.items()):
        print(f"{key}: {value:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolved_config(args)
    dataset = _load_data(args)
    vocab = dataset.config.vocab
    axis = args.axis or cfg["sweep"]["axis"]
    grid = cfg["sweep"]["grid"]
    seeds = cfg["sweep"]["seeds"]
    model_config = cfgmod.build_model_config(cfg, vocab, dataset.config.video_dim)
    base_cfg = cfgmod.build_train_config(cfg, vocab)
    eval_cfg = cfgmod.build_eval_config(cfg)
    rows = evalharness.sweep(axis, grid, dataset, model_config, base_cfg,
                             seeds=seeds, eval_cfg=eval_cfg, jobs=args.jobs)
    out = _out_dir(args, "sweep")
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"sweep_{axis}.csv"
    evalharness.write_rows_csv(rows, csv_path)
    _write_json(out / "resolved_config.json", cfg)
    print(f"wrote {len(rows)} sweep rows -> {csv_path}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _resolved_config(args)
    vocab = cfgmod.build_world_config(cfg).vocab
    model_config = nnet.model_config_from_vocab(
        vocab, video_dim=12, embed_dim=12, hidden_dim=12,
        init_scale=0.1, seed=cfg["model"]["seed"])
    result = nnet.grad_check(model_config, n_samples=args.samples,
                             tolerance=args.tolerance, vocab=vocab)
    status = "PASS" if result["passed"] else "FAIL"
    print(f"gradcheck {status}: max relative error {result['max_rel_err']:.3e} "
          f"(tolerance {result['tolerance']:.1e}, {result['n_samples']} samples)")
    return 0 if result["passed"] else 2


def cmd_report(args) -> int:
    out = _out_dir(args, "report")
    produced = report.render_report(args.run_dir or [], args.sweep_csv or [], out)
    for path in produced["figures"] + produced["tables"]:
        print(f"wrote {path}")
    if not (produced["figures"] or produced["tables"]):
        raise UsageError("nothing to report: pass --run-dir and/or --sweep-csv")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="abstainqa",
                     description="Synthetic QA world + ignorance-aware training framework")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, checkpoint=False):
        p.add_argument("--config", help="JSON config file (defaults used when omitted)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override dataset/train/eval seeds")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        if data:
            p.add_argument("--data", required=True, help="dataset directory from `gen`")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint.json from `train`")

    common(sub.add_parser("gen", help="generate the synthetic dataset"))
    p_train = sub.add_parser("train", help="train a model")
    common(p_train, data=True)
    p_train.add_argument("--log-interventions", action="store_true")
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval, data=True, checkpoint=True)
    p_sweep = sub.add_parser("sweep", help="hyperparameter sweep")
    common(p_sweep, data=True)
    p_sweep.add_argument("--axis", choices=sorted(evalharness.DEFAULT_GRIDS))
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p_gc)
    p_gc.add_argument("--samples", type=int, default=20)
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    p_rep = sub.add_parser("report", help="merge runs/sweeps into tables and figures")
    p_rep.add_argument("--run-dir", action="append", help="training run directory (repeatable)")
    p_rep.add_argument("--sweep-csv", action="append", help="sweep CSV file (repeatable)")
    p_rep.add_argument("--out", help="output directory")
    return parser


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "sweep": cmd_sweep, "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except AbstainQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
