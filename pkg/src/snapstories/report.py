"""Run reports: a tab-delimited comparison table, a text summary and PNG figures."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evalbench import MetricsReport  # noqa: E402

COLUMNS = ("name", "kind", "accuracy", "weighted_f1", "wilcoxon_p", "significant")


def comparison_rows(
    results: Mapping[str, MetricsReport],
    benchmarks: Mapping[str, Mapping[str, float]] | None = None,
    significance: Mapping[str, Mapping] | None = None,
    alpha: float = 0.05,
) -> list[dict]:
    """One row per variant, then one per reference algorithm for the dataset."""
    rows = []
    significance = significance or {}
    for variant, rep in results.items():
        sig = significance.get(variant)
        p = sig["p_value"] if sig else None
        rows.append(
            {
                "name": variant,
                "kind": "run",
                "accuracy": round(rep.mean_accuracy, 4),
                "weighted_f1": round(rep.mean_weighted_f1, 4),
                "wilcoxon_p": "" if p is None else round(p, 4),
                "significant": "" if p is None else ("yes" if p < alpha else "no"),
            }
        )
    for algo, m in (benchmarks or {}).items():
        rows.append(
            {
                "name": algo,
                "kind": "reference",
                "accuracy": m["accuracy"],
                "weighted_f1": m["weighted_f1"],
                "wilcoxon_p": "",
                "significant": "",
            }
        )
    return rows


def write_table(rows: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, delimiter="\t")
        w.writeheader()
        w.writerows(rows)


def format_table(rows: Sequence[dict]) -> str:
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) if rows else len(c) for c in COLUMNS}
    line = "  ".join(c.ljust(widths[c]) for c in COLUMNS)
    out = [line, "-" * len(line)]
    for r in rows:
        out.append("  ".join(str(r[c]).ljust(widths[c]) for c in COLUMNS))
    return "\n".join(out)


def plot_fold_accuracy(results: Mapping[str, MetricsReport], path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    n_var = len(results)
    width = 0.8 / max(n_var, 1)
    for j, (variant, rep) in enumerate(results.items()):
        acc = [f.accuracy for f in rep.per_fold]
        x = np.arange(len(acc)) + j * width
        ax.bar(x, acc, width=width, label=f"{variant} (mean {rep.mean_accuracy:.3f})")
    n_folds = max((len(r.per_fold) for r in results.values()), default=0)
    ax.set_xticks(np.arange(n_folds) + width * (n_var - 1) / 2)
    ax.set_xticklabels([f"fold {i}" for i in range(n_folds)])
    ax.set_ylim(0, 1)
    ax.set_ylabel("test accuracy")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_training_curves(curves: Sequence[Sequence[Mapping]], path: str | Path, title: str = "") -> Path:
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3.2))
    for i, curve in enumerate(curves):
        epochs = [r["epoch"] for r in curve]
        ax_loss.plot(epochs, [r["train_loss"] for r in curve], marker="o", ms=3, label=f"fold {i}")
        ax_acc.plot(epochs, [r["val_accuracy"] for r in curve], marker="o", ms=3, label=f"fold {i}")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.legend(fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_comparison(rows: Sequence[dict], path: str | Path, title: str = "") -> Path:
    names = [r["name"] for r in rows]
    y = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6, 0.45 * len(rows) + 1.2))
    ax.barh(y - 0.2, [r["accuracy"] for r in rows], height=0.4, label="accuracy")
    ax.barh(y + 0.2, [r["weighted_f1"] for r in rows], height=0.4, label="weighted F1")
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
