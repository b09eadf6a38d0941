"""Renderers for the four figure kinds, fed only by softprune's documented
CSV/JSON artifact schemas.  Nothing here recomputes a metric: every plotted
number comes straight out of an artifact file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

SUPPORTED_SUMMARY_SCHEMA = 1
INTEGRATION_TOLERANCE = 1e-6

CSV_SCHEMAS = {
    "sweep": ["strategy", "lambda", "acc", "bwt"],
    "histograms": ["method", "task", "layer", "bin_left", "bin_right", "density"],
    "change_map": ["layer", "row", "col", "abs_change", "importance"],
}


class PlotkitError(ValueError):
    """Bad input artifact: wrong schema, missing columns, empty body."""


@dataclass
class FigureSpec:
    kind: str  # "curves" | "sweep" | "histograms" | "heatmap"
    inputs: list[str]
    output: str
    labels: dict = field(default_factory=dict)


def _read_csv(path: str, schema: str) -> pd.DataFrame:
    expected = CSV_SCHEMAS[schema]
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError as e:
        raise PlotkitError(f"{path}: empty CSV") from e
    missing = [c for c in expected if c not in df.columns]
    if missing:
        raise PlotkitError(f"{path}: missing column(s) {', '.join(missing)} (header is {list(df.columns)})")
    if len(df) == 0:
        raise PlotkitError(f"{path}: CSV has a header but no rows")
    return df


def _load_summary(path: str) -> dict:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("kind") != "run_summary":
        raise PlotkitError(f"{path}: not a run_summary file")
    if doc.get("schema_version") != SUPPORTED_SUMMARY_SCHEMA:
        raise PlotkitError(
            f"{path}: schema_version {doc.get('schema_version')} (renderer supports {SUPPORTED_SUMMARY_SCHEMA})"
        )
    return doc


def _save(fig, output: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
    fig.savefig(output, dpi=120, metadata={"Software": "plotkit"})
    plt.close(fig)


def render_curves(spec: FigureSpec) -> str:
    """Average accuracy after each trained task, one line per strategy."""
    doc = _load_summary(spec.inputs[0])
    fig, ax = plt.subplots(figsize=(6, 4))
    drew = False
    for name, entry in doc["strategies"].items():
        metrics = entry.get("metrics") or {}
        curve = metrics.get("acc_after_task")
        if entry.get("error") or not curve:
            continue
        xs = np.arange(1, len(curve) + 1)
        ax.plot(xs, 100.0 * np.asarray(curve), marker="o", label=name)
        drew = True
    joint = doc["strategies"].get("joint", {})
    if joint.get("metrics"):
        ax.axhline(100.0 * joint["metrics"]["ACC"], linestyle="--", color="gray", label="joint")
        drew = True
    if not drew:
        raise PlotkitError(f"{spec.inputs[0]}: no strategy has an accuracy curve")
    ax.set_xlabel("tasks trained")
    ax.set_ylabel("average accuracy (%)")
    ax.set_title(spec.labels.get("title", doc.get("name", "accuracy over tasks")))
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, spec.output)
    return spec.output


def render_sweep(spec: FigureSpec) -> str:
    """ACC versus lambda for the swept strategy, SGD baseline as a line."""
    df = _read_csv(spec.inputs[0], "sweep")
    swept = df[df["lambda"].notna()]
    if len(swept) == 0:
        raise PlotkitError(f"{spec.inputs[0]}: no swept-lambda rows")
    fig, ax = plt.subplots(figsize=(6, 4))
    for strategy, group in swept.groupby("strategy"):
        group = group.sort_values("lambda")
        positions = np.arange(len(group))
        ax.bar(positions, 100.0 * group["acc"], width=0.6, label=str(strategy))
        ax.set_xticks(positions)
        ax.set_xticklabels([f"{v:g}" for v in group["lambda"]])
    baseline = df[df["lambda"].isna()]
    for _, row in baseline.iterrows():
        ax.axhline(100.0 * row["acc"], linestyle="--", color="black",
                   label=f"{row['strategy']} baseline")
    ax.set_xlabel("lambda")
    ax.set_ylabel("ACC (%)")
    ax.set_title(spec.labels.get("title", "penalty-weight robustness"))
    ax.legend()
    fig.tight_layout()
    _save(fig, spec.output)
    return spec.output


def series_integral(bin_left, bin_right, density) -> float:
    total = 0.0
    for left, right, d in zip(bin_left, bin_right, density):
        total += float(d) * (float(right) - float(left))
    return total


def render_histograms(spec: FigureSpec) -> str:
    """Importance-density overlay, one series per method, for one (task, layer)."""
    df = _read_csv(spec.inputs[0], "histograms")
    task = spec.labels.get("task")
    layer = spec.labels.get("layer", "pooled")
    if task is not None:
        df = df[df["task"] == int(task)]
    df = df[df["layer"] == layer]
    if len(df) == 0:
        raise PlotkitError(f"{spec.inputs[0]}: no rows for task={task} layer={layer!r}")
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, group in df.groupby("method"):
        group = group.sort_values("bin_left")
        total = series_integral(group["bin_left"], group["bin_right"], group["density"])
        if abs(total - 1.0) > INTEGRATION_TOLERANCE:
            plt.close(fig)
            raise PlotkitError(
                f"{spec.inputs[0]}: series {method!r} integrates to {total}, not 1"
            )
        centers = 0.5 * (group["bin_left"].to_numpy() + group["bin_right"].to_numpy())
        ax.plot(centers, group["density"], drawstyle="steps-mid", label=str(method))
    ax.set_xlabel("importance value")
    ax.set_ylabel("density")
    ax.set_title(spec.labels.get("title", f"importance distribution ({layer})"))
    ax.legend()
    fig.tight_layout()
    _save(fig, spec.output)
    return spec.output


def render_heatmap(spec: FigureSpec) -> str:
    """Side-by-side |delta w| and importance heat maps for one layer."""
    df = _read_csv(spec.inputs[0], "change_map")
    layer = spec.labels.get("layer")
    layers = df["layer"].unique().tolist()
    if layer is None:
        layer = layers[-1]
    sub = df[df["layer"] == layer]
    if len(sub) == 0:
        raise PlotkitError(f"{spec.inputs[0]}: no rows for layer {layer!r} (has {layers})")
    rows = int(sub["row"].max()) + 1
    cols = int(sub["col"].max()) + 1
    change = np.zeros((rows, cols))
    importance = np.zeros((rows, cols))
    change[sub["row"], sub["col"]] = sub["abs_change"]
    importance[sub["row"], sub["col"]] = sub["importance"]

    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for ax, matrix, label in (
        (axes[0], change, "|weight change|"),
        (axes[1], importance, "importance value"),
    ):
        im = ax.imshow(matrix, aspect="auto", cmap="viridis", interpolation="nearest")
        ax.set_xlabel("input neuron")
        ax.set_ylabel("output neuron")
        ax.set_title(label)
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.suptitle(spec.labels.get("title", layer))
    fig.tight_layout()
    _save(fig, spec.output)
    return spec.output


RENDERERS = {
    "curves": render_curves,
    "sweep": render_sweep,
    "histograms": render_histograms,
    "heatmap": render_heatmap,
}


def render(spec: FigureSpec) -> str:
    """Dispatch on figure kind; returns the written image path."""
    if spec.kind not in RENDERERS:
        raise PlotkitError(f"unknown figure kind {spec.kind!r} (have {sorted(RENDERERS)})")
    if not spec.inputs:
        raise PlotkitError("figure spec lists no input files")
    for path in spec.inputs:
        if not os.path.exists(path):
            raise PlotkitError(f"input file not found: {path}")
    return RENDERERS[spec.kind](spec)
