"""Rendering of audit results: the canonical report.json, one CSV table per
attribute (rows = metric x task, columns = mitigation, cells "mean ±std"),
and one grouped-bar SVG chart per attribute. Renderers consume the parsed
report dictionary only, so re-rendering never recomputes metrics."""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

MITIGATION_ORDER = ("none", "pre", "pre+proxy", "in", "post")

TABLE_METRICS = (
    ("demographic_parity_ratio", "Demographic Parity"),
    ("equalized_odds_ratio", "Equalized Odds"),
    ("balanced_accuracy_parity", "Balanced Accuracy Parity"),
    ("f1_parity", "F1-score Parity"),
    ("tpr_ratio", "TPR Ratio"),
    ("fpr_ratio", "FPR Ratio"),
    ("fnr_ratio", "FNR Ratio"),
    ("tnr_ratio", "TNR Ratio"),
    ("weighted_f1", "Weighted F1"),
    ("harmonic_mean", "Harmonic Mean"),
)

CHART_METRICS = (
    ("weighted_f1", "Weighted F1"),
    ("equalized_odds_ratio", "Equalized odds ratio"),
    ("harmonic_mean", "Harmonic mean"),
)


def mitigation_label(mitigation: str, attribute: str) -> str:
    pretty = attribute.capitalize()
    return {
        "none": "No Mitigation",
        "pre": f"{pretty} Correction",
        "pre+proxy": f"{pretty} & Total Brain Volume Correction",
        "in": "Adversarial Debiasing",
        "post": "Reject Option Classification",
    }[mitigation]


def format_cell(mean: float | None, std: float | None) -> str:
    """Two-decimal "mean ±std" cell; undefined entries render as n/a."""
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "n/a"
    if std is None or (isinstance(std, float) and math.isnan(std)):
        std = 0.0
    return f"{mean:.2f} ±{std:.2f}"


def _sanitize(obj):
    """NaN/inf -> None so the report stays valid JSON."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_report_json(report: dict, path) -> None:
    payload = json.dumps(_sanitize(report), sort_keys=True, indent=2)
    Path(path).write_text(payload + "\n")


def load_report_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _ordered_mitigations(cells_for_attribute: dict) -> list[str]:
    present = {m for tasks in cells_for_attribute.values() for m in tasks}
    return [m for m in MITIGATION_ORDER if m in present]


def render_attribute_csv(report: dict, attribute: str, path) -> None:
    cells = report["cells"][attribute]
    mitigations = _ordered_mitigations(cells)
    tasks = sorted(cells.keys(), key=lambda t: ("CN/MCI", "MCI/AD", "CN/AD").index(t))
    lines = ["Metric,Task," + ",".join(
        f'"{mitigation_label(m, attribute)}"' for m in mitigations)]
    for key, label in TABLE_METRICS:
        for task in tasks:
            row = [f'"{label}"', f'"{task}"']
            for mitigation in mitigations:
                entry = cells[task].get(mitigation, {}).get("metrics", {}).get(key)
                if entry is None:
                    row.append('"n/a"')
                else:
                    row.append(f'"{format_cell(entry.get("mean"), entry.get("std"))}"')
            lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def render_attribute_chart(report: dict, attribute: str, path) -> None:
    plt.rcParams["svg.hashsalt"] = "fairdiag"
    cells = report["cells"][attribute]
    mitigations = _ordered_mitigations(cells)
    tasks = sorted(cells.keys(), key=lambda t: ("CN/MCI", "MCI/AD", "CN/AD").index(t))
    fig, axes = plt.subplots(1, len(tasks), figsize=(5.0 * len(tasks), 4.0),
                             sharey=True, squeeze=False)
    width = 0.8 / len(CHART_METRICS)
    for ax, task in zip(axes[0], tasks):
        positions = range(len(mitigations))
        for k, (key, label) in enumerate(CHART_METRICS):
            means, stds = [], []
            for mitigation in mitigations:
                entry = cells[task].get(mitigation, {}).get("metrics", {}).get(key) or {}
                mean = entry.get("mean")
                std = entry.get("std")
                means.append(0.0 if mean is None else mean)
                stds.append(0.0 if std is None else std)
            ax.bar([p + k * width for p in positions], means, width=width,
                   yerr=stds, capsize=2, label=label)
        ax.set_title(task)
        ax.set_xticks([p + width for p in positions])
        ax.set_xticklabels([mitigation_label(m, attribute) for m in mitigations],
                           rotation=30, ha="right", fontsize=7)
        ax.set_ylim(0.0, 1.05)
    axes[0][0].set_ylabel("score")
    axes[0][-1].legend(fontsize=8)
    fig.suptitle(f"Fairness and utility across mitigations: {attribute}")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_proxy_csv(report: dict, attribute: str, path) -> None:
    scan = report["proxy"][attribute]
    flagged = set(scan.get("flagged", []))
    lines = ["feature,mean_abs_attribution,flagged"]
    for name, value in scan["importances"]:
        lines.append(f'"{name}",{value:.6f},{str(name in flagged).lower()}')
    Path(path).write_text("\n".join(lines) + "\n")


def render_outputs(report: dict, out_dir) -> list[Path]:
    """Emit per-attribute CSV tables, SVG charts, and proxy rankings;
    returns written paths."""
    out = Path(out_dir)
    written = []
    for attribute in sorted(report["cells"]):
        csv_path = out / f"fairness_{attribute}.csv"
        render_attribute_csv(report, attribute, csv_path)
        written.append(csv_path)
        svg_path = out / f"fairness_{attribute}.svg"
        render_attribute_chart(report, attribute, svg_path)
        written.append(svg_path)
    for attribute in sorted(report.get("proxy", {})):
        proxy_path = out / f"proxy_{attribute}.csv"
        render_proxy_csv(report, attribute, proxy_path)
        written.append(proxy_path)
    return written
