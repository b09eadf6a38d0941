"""Accuracy matrix over a task sequence and the ACC/FWT/BWT/SMT summaries.

P[j][i] is the test accuracy (fraction in [0, 1]) on task i after training
task j, defined for i <= j; 1-based task numbering at the API, NaN marks
absent entries.  Accuracies stay fractions everywhere; rendering as percent
happens only at the reporting boundary.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import Task
from .errors import ConfigurationError, StateError, UndefinedMetricError
from .nn import ModelState, atomic_write_json, forward

RESULTS_SCHEMA = 1


@dataclass
class AccuracyMatrix:
    task_count: int
    values: np.ndarray = field(default=None)  # (T, T), NaN where undefined
    reference: np.ndarray = field(default=None)  # m_i, NaN until provided
    reference_source: str | None = None  # "joint" | "single-task"

    def __post_init__(self):
        if self.values is None:
            self.values = np.full((self.task_count, self.task_count), np.nan)
        if self.reference is None:
            self.reference = np.full(self.task_count, np.nan)

    def get(self, j: int, i: int) -> float:
        """P[j][i] with 1-based task numbers."""
        return float(self.values[j - 1, i - 1])

    def set(self, j: int, i: int, accuracy: float) -> None:
        if i > j:
            raise ConfigurationError(f"P[{j}][{i}] is undefined for i > j")
        self.values[j - 1, i - 1] = accuracy

    def set_reference(self, m: list[float], source: str) -> None:
        if len(m) != self.task_count:
            raise ConfigurationError(
                f"reference has {len(m)} entries for {self.task_count} tasks"
            )
        self.reference = np.asarray(m, dtype=np.float64)
        self.reference_source = source


def task_accuracy(model: ModelState, task: Task) -> float:
    """Accuracy on the task's test set with the correct head and label space.

    Single-head split tasks are scored in the global label space (remapped
    labels mapped back through the recorded class subset).
    """
    if task.test is None or len(task.test) == 0:
        raise ConfigurationError(f"task {task.spec.task_id} has no test set")
    head_task = task.spec.head_id if model.head_mode == "multi" else 0
    logits = forward(model, task.test.images, task_id=head_task)
    pred = logits.argmax(axis=1)
    labels = task.test.labels
    if model.head_mode == "single" and task.spec.class_subset is not None:
        labels = np.asarray(task.spec.class_subset)[labels]
    return float((pred == labels).mean())


def evaluate_row(model: ModelState, tasks: list[Task], j: int, matrix: AccuracyMatrix) -> None:
    """Fill P[j][i] for every task i <= j using the model after task j."""
    for i in range(1, j + 1):
        matrix.set(j, i, task_accuracy(model, tasks[i - 1]))


def acc(matrix: AccuracyMatrix) -> float:
    """Mean of the final row: (1/T) sum_i P[T][i]."""
    final = matrix.values[-1]
    if np.isnan(final).any():
        raise StateError("final row of the accuracy matrix is incomplete")
    return float(final.mean())


def fwt(matrix: AccuracyMatrix) -> float:
    """(1/(T-1)) sum_{i<=T-1} (P[i][i] - m_i)."""
    t = matrix.task_count
    if t < 2:
        raise UndefinedMetricError("FWT needs at least 2 tasks")
    total = 0.0
    for i in range(1, t):
        if np.isnan(matrix.reference[i - 1]):
            raise ConfigurationError(f"missing reference accuracy m[{i}]")
        total += matrix.get(i, i) - float(matrix.reference[i - 1])
    return total / (t - 1)


def bwt(matrix: AccuracyMatrix) -> float:
    """(1/(T-1)) sum_{i<=T-1} (P[T][i] - P[i][i])."""
    t = matrix.task_count
    if t < 2:
        raise UndefinedMetricError("BWT needs at least 2 tasks")
    total = 0.0
    for i in range(1, t):
        total += matrix.get(t, i) - matrix.get(i, i)
    return total / (t - 1)


def smt(matrix: AccuracyMatrix) -> float:
    """Mean over tasks j <= T-1 of the population variance of task j's
    accuracy across evaluations k = j..T (stability of memory)."""
    t = matrix.task_count
    if t < 2:
        raise UndefinedMetricError("SMT needs at least 2 tasks")
    total = 0.0
    for j in range(1, t):
        column = np.array([matrix.get(k, j) for k in range(j, t + 1)])
        column -= column[0]  # shift so constant columns give exactly 0
        total += float(np.var(column))  # population variance
    return total / (t - 1)


def summarize(matrix: AccuracyMatrix) -> dict:
    """All metrics that are defined for this matrix; undefined ones are None."""
    t = matrix.task_count
    out = {"ACC": acc(matrix)}
    out["BWT"] = bwt(matrix) if t >= 2 else None
    out["SMT"] = smt(matrix) if t >= 2 else None
    if t >= 2 and not np.isnan(matrix.reference[: t - 1]).any():
        out["FWT"] = fwt(matrix)
    else:
        out["FWT"] = None
    out["acc_after_task"] = [
        float(np.nanmean(matrix.values[j, : j + 1])) for j in range(t)
    ]
    return out


def _nan_to_none(values: np.ndarray) -> list:
    return [[None if np.isnan(v) else float(v) for v in row] for row in values]


def save_results(
    directory: str,
    strategy: str,
    matrix: AccuracyMatrix,
    metrics: dict,
    config_hash: str,
    seeds: dict,
    extra: dict | None = None,
) -> tuple[str, str]:
    """Write results.json and the flat accuracy.csv; returns both paths."""
    import os

    os.makedirs(directory, exist_ok=True)
    doc = {
        "schema_version": RESULTS_SCHEMA,
        "kind": "results",
        "strategy": strategy,
        "task_count": matrix.task_count,
        "P": _nan_to_none(matrix.values),
        "reference": [None if np.isnan(v) else float(v) for v in matrix.reference],
        "reference_source": matrix.reference_source,
        "metrics": metrics,
        "config_hash": config_hash,
        "seeds": seeds,
    }
    if extra:
        doc.update(extra)
    json_path = os.path.join(directory, "results.json")
    atomic_write_json(doc, json_path)

    csv_path = os.path.join(directory, "accuracy.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["task_trained", "task_evaluated", "accuracy"])
        t = matrix.task_count
        for j in range(1, t + 1):
            for i in range(1, j + 1):
                v = matrix.get(j, i)
                if not np.isnan(v):
                    writer.writerow([j, i, repr(v)])
    return json_path, csv_path


def load_results(path: str) -> dict:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("kind") != "results" or doc.get("schema_version") != RESULTS_SCHEMA:
        raise ConfigurationError(f"{path}: not a schema-v{RESULTS_SCHEMA} results file")
    return doc
