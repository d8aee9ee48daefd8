"""Comparison reports: delimited tables plus figures rendered to files.

``render_report`` consumes labeled evaluation key-value files and writes,
next to each other in the output directory:

* ``report.tsv``        one row per run, split scores and combined accuracy
* ``report_splits.png`` grouped bars of per-split accuracy for every run
* ``report_combined.png`` combined accuracy per run
* ``report_flags.png``  enhancement-flag ablation grid (only when every run
  carries flag metadata)
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .vrrmodel import parse_kv_report

SPLITS = ("many", "medium", "few", "all")

plt.rcParams.update({
    "figure.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.axisbelow": True,
})

_FLAG_KEYS = (
    "meta.flags.so_seed",
    "meta.flags.hardness_condition",
    "meta.flags.curriculum",
)
_FLAG_HEADERS = ("s-o seed", "hardness", "curriculum")


def _load(labeled_paths: Sequence[tuple[str, Path]]) -> list[tuple[str, dict[str, str]]]:
    return [(label, parse_kv_report(Path(p).read_text(encoding="utf-8")))
            for label, p in labeled_paths]


def _score(kv: dict[str, str], key: str) -> float:
    value = kv.get(key, "NaN")
    try:
        return float(value)
    except ValueError:
        return float("nan")


def write_table(rows: list[tuple[str, dict[str, str]]], path: Path) -> None:
    has_flags = all(all(k in kv for k in _FLAG_KEYS) for _, kv in rows)
    header = ["label"]
    if has_flags:
        header += ["so_seed", "hardness", "curriculum"]
    header += [f"so_{s}" for s in SPLITS] + [f"relation_{s}" for s in SPLITS] + ["combined"]
    lines = ["\t".join(header)]
    for label, kv in rows:
        cells = [label]
        if has_flags:
            cells += [kv[k] for k in _FLAG_KEYS]
        cells += [kv.get(f"so.{s}", "NaN") for s in SPLITS]
        cells += [kv.get(f"relation.{s}", "NaN") for s in SPLITS]
        cells.append(kv.get("combined.all", "NaN"))
        lines.append("\t".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def plot_splits(rows: list[tuple[str, dict[str, str]]], path: Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2), sharey=False)
    width = 0.8 / max(len(rows), 1)
    x = np.arange(len(SPLITS))
    for panel, (ax, prefix, title) in enumerate(
        zip(axes, ("so", "relation"), ("subject/object", "relation"))
    ):
        for i, (label, kv) in enumerate(rows):
            vals = [_score(kv, f"{prefix}.{s}") for s in SPLITS]
            ax.bar(x + i * width, vals, width=width, label=label if panel == 0 else None)
        ax.set_xticks(x + width * (len(rows) - 1) / 2)
        ax.set_xticklabels(SPLITS)
        ax.set_title(f"{title}: average per-class accuracy")
        ax.set_ylabel("%")
    if rows:
        fig.legend(loc="upper center", ncol=min(len(rows), 4), fontsize=8,
                   bbox_to_anchor=(0.5, 1.12))
    fig.tight_layout()
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def plot_combined(rows: list[tuple[str, dict[str, str]]], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(rows)), 3.0))
    labels = [label for label, _ in rows]
    vals = [_score(kv, "combined.all") for _, kv in rows]
    ax.bar(np.arange(len(rows)), vals, width=0.6, color="#4878a8")
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("combined accuracy (%)")
    ax.set_title("combined S/O + relation accuracy")
    for i, v in enumerate(vals):
        if np.isfinite(v):
            ax.annotate(f"{v:.2f}", (i, v), ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def plot_flag_grid(rows: list[tuple[str, dict[str, str]]], path: Path) -> None:
    """Table-style ablation figure: one row per flag combination."""
    fig, ax = plt.subplots(figsize=(6.0, 0.5 + 0.4 * len(rows)))
    ax.axis("off")
    cells = []
    for label, kv in rows:
        marks = ["on" if kv[k] == "true" else "off" for k in _FLAG_KEYS]
        cells.append(marks + [kv.get("combined.all", "NaN"), label])
    table = ax.table(
        cellText=cells,
        colLabels=list(_FLAG_HEADERS) + ["combined", "run"],
        loc="center",
        cellLoc="center",
    )
    table.auto_set_font_size(False)
    table.set_fontsize(9)
    table.scale(1.0, 1.3)
    ax.set_title("enhancement-flag ablation", pad=12)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def render_report(labeled_paths: Sequence[tuple[str, Path]], out_dir: Path) -> dict[str, Path]:
    rows = _load(labeled_paths)
    out_dir = Path(out_dir)
    outputs: dict[str, Path] = {}

    table_path = out_dir / "report.tsv"
    write_table(rows, table_path)
    outputs[table_path.name] = table_path

    splits_path = out_dir / "report_splits.png"
    plot_splits(rows, splits_path)
    outputs[splits_path.name] = splits_path

    combined_path = out_dir / "report_combined.png"
    plot_combined(rows, combined_path)
    outputs[combined_path.name] = combined_path

    if len(rows) >= 2 and all(all(k in kv for k in _FLAG_KEYS) for _, kv in rows):
        flags_path = out_dir / "report_flags.png"
        plot_flag_grid(rows, flags_path)
        outputs[flags_path.name] = flags_path
    return outputs
