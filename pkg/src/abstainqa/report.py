"""Render training/sweep reports: merged CSV tables plus matplotlib figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .curriculum import Schedule, prob  # noqa: E402
from .errors import ConfigError  # noqa: E402


def read_metrics_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def plot_training_curves(runs: dict, out_path):
    """Loss and realized intervention rate per epoch for one or more runs."""
    fig, (ax_loss, ax_rate) = plt.subplots(1, 2, figsize=(10, 4))
    for label, rows in runs.items():
        epochs = [r["epoch"] for r in rows]
        ax_loss.plot(epochs, [r["mean_loss"] for r in rows], label=label)
        ax_rate.plot(epochs, [r["realized_rate"] for r in rows], label=label)
        ax_rate.plot(epochs, [r["p_e"] for r in rows], linestyle="--", alpha=0.5)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean loss")
    ax_rate.set_xlabel("epoch")
    ax_rate.set_ylabel("intervention rate (solid) / p(e) (dashed)")
    ax_loss.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_schedules(epochs: int, p_r: float, out_path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for kind in ("quadratic", "linear", "exponential"):
        sched = Schedule(kind=kind, epochs=epochs, p_r=p_r)
        ax.plot(range(1, epochs + 1), [prob(sched, e) for e in range(1, epochs + 1)],
                label=kind)
    fixed = Schedule(kind="fixed", epochs=epochs, fixed_p=p_r)
    ax.plot(range(1, epochs + 1), [prob(fixed, e) for e in range(1, epochs + 1)],
            label=f"fixed {p_r}", linestyle=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("intervention probability")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_sweep(rows: list, axis: str, out_path,
               metrics=("clean_accuracy", "conflict_accuracy")):
    if not rows:
        raise ConfigError("no sweep rows to plot")
    values = sorted({r["value"] for r in rows}, key=str)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = list(range(len(values)))
    for metric in metrics:
        if not any(metric in r for r in rows):
            continue
        means = []
        for v in values:
            pts = [float(r[metric]) for r in rows if r["value"] == v and metric in r]
            means.append(sum(pts) / len(pts))
        ax.plot(xs, means, marker="o", label=metric)
    ax.set_xticks(xs)
    ax.set_xticklabels([str(v) for v in values], rotation=30, fontsize=8)
    ax.set_xlabel(axis)
    ax.set_ylabel("mean over seeds")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_report(run_dirs, sweep_csvs, out_dir) -> dict:
    """Merge run manifests and sweep tables into one directory of artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    produced = {"figures": [], "tables": []}
    summary_rows = []

    runs = {}
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        manifest_path = run_dir / "run_manifest.json"
        metrics_path = run_dir / "metrics.csv"
        if not metrics_path.exists():
            raise ConfigError(f"no metrics.csv in {run_dir}")
        rows = read_metrics_csv(metrics_path)
        runs[run_dir.name] = rows
        entry = {"run": run_dir.name, "final_mean_loss": rows[-1]["mean_loss"],
                 "epochs": int(rows[-1]["epoch"])}
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            entry.update(task=manifest.get("task"), seed=manifest.get("seed"),
                         baseline_mode=manifest.get("baseline_mode"),
                         checkpoint_hash=manifest.get("checkpoint_hash"))
        eval_path = run_dir / "eval_report.json"
        if eval_path.exists():
            report = json.loads(eval_path.read_text(encoding="utf-8"))
            entry.update({k: v for k, v in report.get("metrics", {}).items()})
        summary_rows.append(entry)

    if runs:
        fig_path = out / "training_curves.png"
        plot_training_curves(runs, fig_path)
        produced["figures"].append(str(fig_path))
        epochs = max(int(rows[-1]["epoch"]) for rows in runs.values())
        sched_path = out / "schedules.png"
        plot_schedules(epochs, 0.3, sched_path)
        produced["figures"].append(str(sched_path))

    for sweep_csv in sweep_csvs:
        sweep_csv = Path(sweep_csv)
        with open(sweep_csv, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        axis = rows[0].get("axis", sweep_csv.stem)
        fig_path = out / f"sweep_{axis}.png"
        plot_sweep(rows, axis, fig_path)
        produced["figures"].append(str(fig_path))
        summary_rows.extend({"run": f"{sweep_csv.stem}[{r.get('value')},s{r.get('seed')}]",
                             **{k: r[k] for k in r if k in (
                                 "clean_accuracy", "conflict_accuracy", "shortcut_rate",
                                 "admission_displacement", "admission_perturbation",
                                 "unknown_rate")}}
                            for r in rows)

    if summary_rows:
        fields = sorted({k for row in summary_rows for k in row})
        table_path = out / "summary.csv"
        with open(table_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in summary_rows:
                writer.writerow(row)
        produced["tables"].append(str(table_path))
    return produced
