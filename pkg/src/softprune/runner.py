"""Experiment orchestration: task building, per-strategy training loops,
boundary importance/anchor updates, metric recording, artifact persistence.

Artifact layout under ``output_dir``::

    resolved_config.json
    run_summary.json
    <strategy>/results.json, accuracy.csv
    <strategy>/checkpoint_init.json, checkpoint_task{t}.json
    <strategy>/importance_task{t}.json, importance_cumulative_task{t}.json
    <strategy>/diag_saliency_task1_after{1,T}.json   (all strategies)
    sweep/... (sweep subcommand), analysis/... (analyze subcommand)
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis
from .config import (
    CONSOLIDATING,
    ExperimentConfig,
    dump_resolved,
    resolve_head_mode,
)
from .consolidation import Anchor, ConsolidationConfig, take_anchor, total_loss
from .data import Dataset, Task, load_mnist_dir, make_permuted_task, make_split_tasks, subsample, synthetic_dataset
from .errors import ConfigurationError
from .importance import (
    ImportanceMap,
    accumulate,
    clamp,
    fisher_diagonal,
    load_importance_snapshot,
    mas_importance,
    save_importance_snapshot,
    si_accumulator_init,
    si_accumulator_update,
    si_importance,
    spp_saliency,
)
from .metrics import AccuracyMatrix, evaluate_row, load_results, save_results, summarize, task_accuracy
from .nn import (
    Batch,
    ModelState,
    add_head,
    atomic_write_json,
    init_model,
    lr_schedule,
    load_checkpoint,
    objective_value_and_gradients,
    save_checkpoint,
    sgd_step,
)
from .rng import DATA, DROPOUT, IMPORTANCE, SWEEP_SPLIT, derive_rng

SUMMARY_SCHEMA = 1


@dataclass
class StrategyOutcome:
    strategy: str
    head_mode: str
    metrics: dict = field(default_factory=dict)
    matrix: AccuracyMatrix | None = None
    artifact_dir: str | None = None
    wall_time_per_task: list[float] = field(default_factory=list)
    error: str | None = None


@dataclass
class RunRecord:
    config_hash: str
    output_dir: str
    task_count: int
    reference: list[float] | None
    reference_source: str | None
    outcomes: dict[str, StrategyOutcome]


def _subseed(seed: int, *key: int) -> int:
    return int(derive_rng(seed, *key).integers(0, 2**31 - 1))


# --- task building -----------------------------------------------------------


def _source_pools(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    t = cfg.tasks
    if t.source == "mnist":
        return load_mnist_dir(t.data_dir, "train"), load_mnist_dir(t.data_dir, "test")
    train = synthetic_dataset(t.synthetic_train_pool, t.synthetic_seed, split="train", noise=t.synthetic_noise)
    test = synthetic_dataset(t.synthetic_test_pool, t.synthetic_seed, split="test", noise=t.synthetic_noise)
    return train, test


def build_tasks(cfg: ExperimentConfig) -> list[Task]:
    """Deterministic task sequence; TaskSpec records the realized sizes."""
    t = cfg.tasks
    train_pool, test_pool = _source_pools(cfg)
    tasks = []
    if t.kind == "split":
        for task in make_split_tasks(train_pool, test_pool, t.class_subsets, source=t.source):
            tid = task.spec.task_id
            n_train = min(t.train_size, len(task.train))
            n_test = min(t.test_size, len(task.test))
            task.train = subsample(task.train, n_train, _subseed(cfg.seeds.data, DATA, tid, 101))
            task.test = subsample(task.test, n_test, _subseed(cfg.seeds.data, DATA, tid, 102))
            task.spec.train_size, task.spec.test_size = n_train, n_test
            tasks.append(task)
        return tasks

    seen = set()
    for tid in range(1, t.task_count + 1):
        if tid == 1 and t.first_task_identity:
            perm_seed = None
        else:
            perm_seed = _subseed(t.permutation_seed, tid)
            if perm_seed in seen:  # astronomically unlikely; keep seeds distinct
                perm_seed += 1
            seen.add(perm_seed)
        train = subsample(train_pool, min(t.train_size, len(train_pool)), _subseed(cfg.seeds.data, DATA, tid, 101))
        test = subsample(test_pool, min(t.test_size, len(test_pool)), _subseed(cfg.seeds.data, DATA, tid, 102))
        task = make_permuted_task(train, test, perm_seed, tid, source=t.source)
        task.spec.train_size, task.spec.test_size = len(train), len(test)
        tasks.append(task)
    return tasks


def _training_labels(task: Task, head_mode: str) -> np.ndarray:
    """Multi-head trains on remapped labels; single-head on global classes."""
    if head_mode == "single" and task.spec.class_subset is not None:
        return np.asarray(task.spec.class_subset)[task.train.labels]
    return task.train.labels


def _head_classes(task: Task) -> int:
    return task.train.class_count


def _fresh_model(cfg: ExperimentConfig, head_mode: str) -> ModelState:
    return init_model(cfg.model.arch, cfg.seeds.init, head_mode, cfg.model.dropout_rate)


# --- single training steps -----------------------------------------------------


def strategy_step(
    strategy: str,
    model: ModelState,
    batch: Batch,
    anchor: Anchor | None,
    importance: ImportanceMap | None,
    lam: float,
    lr: float,
    task_index: int,
    rng: np.random.Generator | None = None,
    si_omega: dict | None = None,
) -> ModelState:
    """One optimizer step under the given strategy's update rule."""
    tid = batch.task_id
    if strategy in ("sgd", "finetune", "joint"):
        _, g = objective_value_and_gradients(
            model, batch.inputs, batch.labels, "cross_entropy", tid, True, rng
        )
        sgd_step(model, g, lr)
    elif strategy == "sgd_f":
        _, g = objective_value_and_gradients(
            model, batch.inputs, batch.labels, "cross_entropy", tid, True, rng
        )
        if task_index > 1:  # trunk frozen after the first task
            for i in range(len(model.trunk)):
                g.tensors[f"trunk.{i}.weight"][...] = 0.0
                g.tensors[f"trunk.{i}.bias"][...] = 0.0
        sgd_step(model, g, lr)
    elif strategy in ("spp", "ewc", "mas"):
        cc = ConsolidationConfig(lam=lam, strategy=strategy)
        _, g = total_loss(
            model,
            batch.inputs,
            batch.labels,
            tid,
            anchor if task_index > 1 else None,
            importance if task_index > 1 else None,
            cc,
            True,
            rng,
        )
        sgd_step(model, g, lr)
    elif strategy == "si":
        _, g = objective_value_and_gradients(
            model, batch.inputs, batch.labels, "cross_entropy", tid, True, rng
        )
        head = g.active_head
        touched = [f"trunk.{i}.{r}" for i in range(len(model.trunk)) for r in ("weight", "bias")]
        touched += [f"head.{head}.weight", f"head.{head}.bias"]
        before = {name: model.get_param(name).copy() for name in touched}
        sgd_step(model, g, lr)
        delta = {name: model.get_param(name) - before[name] for name in touched}
        for name in touched:
            si_omega.setdefault(name, np.zeros_like(delta[name]))
        si_accumulator_update(si_omega, g, delta)
    else:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    return model


def _train_task(strategy, model, task, task_index, cfg, anchor, importance, si_omega):
    x = task.train.images
    y = _training_labels(task, model.head_mode)
    tid = task.spec.head_id
    n = len(task.train)
    bsz = cfg.training.batch_size
    steps_per_epoch = math.ceil(n / bsz)
    decay_every = cfg.training.lr_decay_every or steps_per_epoch
    drop_rng = derive_rng(cfg.seeds.dropout, DROPOUT, task_index)
    lam = cfg.lambdas.get(strategy, 0.0)
    step = 0
    for epoch in range(cfg.training.epochs):
        order = derive_rng(cfg.seeds.data, DATA, task_index, epoch).permutation(n)
        for start in range(0, n, bsz):
            rows = order[start : start + bsz]
            lr = lr_schedule(cfg.training.lr, step, decay_every, cfg.training.lr_decay_ratio)
            strategy_step(
                strategy,
                model,
                Batch(x[rows], y[rows], tid),
                anchor,
                importance,
                lam,
                lr,
                task_index,
                drop_rng,
                si_omega,
            )
            step += 1


# --- boundary importance -------------------------------------------------------


def _importance_sample(task: Task, cfg: ExperimentConfig, head_mode: str):
    n = min(cfg.importance_sample_size, len(task.train))
    rng = derive_rng(cfg.seeds.data, IMPORTANCE, task.spec.task_id)
    idx = np.sort(rng.choice(len(task.train), size=n, replace=False))
    labels = _training_labels(task, head_mode)[idx]
    return task.train.images[idx], labels


def _entropy_saliency_map(model, inputs, tid, window):
    """Taylor saliency of the entropy summed over a fixed-size window.

    Gradient and Fisher are estimated as means over the whole sample (good
    statistics), then scaled to the entropy summed over ``window`` inputs:
    the quantity being ranked is the change in accumulated error, and only at
    that scale do penalty weights in the supported 0.5..4 range actually
    bite.  A fixed window keeps the scale independent of the estimation
    sample size; rank-based diagnostics are unaffected either way.
    """
    _, g = objective_value_and_gradients(model, inputs, None, "entropy", tid)
    fisher = fisher_diagonal(model, inputs, "entropy", tid)
    sal = spp_saliency(model, g, fisher)
    return {name: float(window) * t for name, t in sal.items()}


def _task_importance(strategy, model, task, cfg, head_mode, si_state):
    inputs, labels = _importance_sample(task, cfg, head_mode)
    tid = task.spec.head_id
    if strategy == "spp":
        return clamp(_entropy_saliency_map(model, inputs, tid, cfg.importance_sum_window))
    if strategy == "ewc":
        fisher = fisher_diagonal(
            model, inputs, "loglik", tid, labels=labels if cfg.ewc_use_true_labels else None
        )
        return clamp(fisher.tensors)
    if strategy == "mas":
        return clamp(mas_importance(model, inputs, tid))
    if strategy == "si":
        omega, start = si_state
        total_delta = {
            name: model.get_param(name) - start[name] if name in start else model.get_param(name) * 0.0
            for name in omega
        }
        return clamp(si_importance(omega, total_delta, cfg.si_xi))
    raise ConfigurationError(f"strategy {strategy!r} has no importance rule")


# --- per-strategy sequence run ----------------------------------------------------


def _run_strategy(strategy, tasks, cfg, reference, reference_source, config_hash):
    head_mode = resolve_head_mode(strategy, cfg.model.head_mode)
    outdir = os.path.join(cfg.output_dir, strategy)
    os.makedirs(outdir, exist_ok=True)
    model = _fresh_model(cfg, head_mode)
    t_count = len(tasks)
    matrix = AccuracyMatrix(t_count)
    if reference is not None:
        matrix.set_reference(reference, reference_source)
    importance = ImportanceMap()
    anchor: Anchor | None = None
    wall_times = []
    save_checkpoint(model, os.path.join(outdir, "checkpoint_init.json"))
    diag_sample = None
    si_state = None

    for index, task in enumerate(tasks, start=1):
        if head_mode == "multi" and task.spec.head_id not in model.heads:
            add_head(model, task.spec.head_id, _head_classes(task))
        if strategy == "si":
            si_state = (si_accumulator_init(model), {k: v.copy() for k, v in model.parameters().items()})

        started = time.perf_counter()
        _train_task(
            strategy, model, task, index, cfg, anchor, importance,
            si_state[0] if si_state else None,
        )
        wall_times.append(time.perf_counter() - started)

        evaluate_row(model, tasks, index, matrix)
        save_checkpoint(model, os.path.join(outdir, f"checkpoint_task{index}.json"))

        if strategy in CONSOLIDATING:
            task_map = _task_importance(strategy, model, task, cfg, head_mode, si_state)
            accumulate(importance, index, task_map)
            save_importance_snapshot(
                task_map,
                os.path.join(outdir, f"importance_task{index}.json"),
                task_id=index,
                objective=strategy,
                sample_count=min(cfg.importance_sample_size, len(task.train)),
                seed=cfg.seeds.data,
            )
            save_importance_snapshot(
                importance.cumulative,
                os.path.join(outdir, f"importance_cumulative_task{index}.json"),
                task_id=index,
                objective=strategy,
                sample_count=min(cfg.importance_sample_size, len(task.train)),
                seed=cfg.seeds.data,
            )
            anchor = take_anchor(model, index, previous=anchor)

        # saliency retention diagnostics: the task-1 sample, measured after
        # task 1 and again after the final task, for every strategy
        if index == 1:
            diag_sample = _importance_sample(tasks[0], cfg, head_mode)[0]
            _save_diag_saliency(model, diag_sample, tasks[0], outdir, 1, cfg)
        if index == t_count and t_count > 1:
            _save_diag_saliency(model, diag_sample, tasks[0], outdir, t_count, cfg)

    metrics = summarize(matrix)
    save_results(
        outdir,
        strategy,
        matrix,
        metrics,
        config_hash,
        {"init": cfg.seeds.init, "data": cfg.seeds.data, "dropout": cfg.seeds.dropout},
        extra={"head_mode": head_mode, "wall_time_per_task": wall_times},
    )
    return StrategyOutcome(strategy, head_mode, metrics, matrix, outdir, wall_times)


def _save_diag_saliency(model, inputs, task1, outdir, after_task, cfg):
    sal = clamp(_entropy_saliency_map(model, inputs, task1.spec.head_id, cfg.importance_sum_window))
    save_importance_snapshot(
        sal,
        os.path.join(outdir, f"diag_saliency_task1_after{after_task}.json"),
        task_id=1,
        objective="entropy-saliency",
        sample_count=inputs.shape[0],
        seed=cfg.seeds.data,
    )


# --- joint / single-task references --------------------------------------------------


def _run_joint(tasks, cfg, config_hash):
    head_mode = resolve_head_mode("joint", cfg.model.head_mode)
    outdir = os.path.join(cfg.output_dir, "joint")
    os.makedirs(outdir, exist_ok=True)
    model = _fresh_model(cfg, head_mode)
    for task in tasks:
        if head_mode == "multi" and task.spec.head_id not in model.heads:
            add_head(model, task.spec.head_id, _head_classes(task))

    xs = [task.train.images for task in tasks]
    ys = [_training_labels(task, head_mode) for task in tasks]
    tids = [task.spec.head_id for task in tasks]
    total_rows = sum(len(x) for x in xs)
    bsz = cfg.training.batch_size
    decay_every = cfg.training.lr_decay_every or math.ceil(total_rows / bsz)
    drop_rng = derive_rng(cfg.seeds.dropout, DROPOUT, 0)

    started = time.perf_counter()
    step = 0
    for epoch in range(cfg.training.epochs):
        batches = []
        for k, x in enumerate(xs):
            order = derive_rng(cfg.seeds.data, DATA, 0, epoch, k).permutation(len(x))
            batches += [(k, order[s : s + bsz]) for s in range(0, len(x), bsz)]
        derive_rng(cfg.seeds.data, DATA, 0, epoch, len(xs)).shuffle(batches)
        for k, rows in batches:
            lr = lr_schedule(cfg.training.lr, step, decay_every, cfg.training.lr_decay_ratio)
            strategy_step(
                "joint", model, Batch(xs[k][rows], ys[k][rows], tids[k]),
                None, None, 0.0, lr, 1, drop_rng,
            )
            step += 1
    wall = time.perf_counter() - started

    per_task = [task_accuracy(model, task) for task in tasks]
    metrics = {
        "ACC": float(np.mean(per_task)),
        "FWT": None,
        "BWT": None,
        "SMT": None,
        "per_task_accuracy": per_task,
        "acc_after_task": None,
    }
    save_checkpoint(model, os.path.join(outdir, "checkpoint_final.json"))
    matrix = AccuracyMatrix(len(tasks))
    matrix.values[-1, :] = per_task  # joint trains once; only the final row exists
    save_results(
        outdir, "joint", matrix, metrics, config_hash,
        {"init": cfg.seeds.init, "data": cfg.seeds.data, "dropout": cfg.seeds.dropout},
        extra={"head_mode": head_mode, "wall_time_per_task": [wall]},
    )
    return StrategyOutcome("joint", head_mode, metrics, matrix, outdir, [wall]), per_task


def _run_single_task_reference(tasks, cfg):
    """m_i from a fresh model trained on task i alone with the same budget."""
    head_mode = cfg.model.head_mode
    reference = []
    for index, task in enumerate(tasks, start=1):
        model = _fresh_model(cfg, head_mode)
        if head_mode == "multi" and task.spec.head_id not in model.heads:
            add_head(model, task.spec.head_id, _head_classes(task))
        _train_task("sgd" if head_mode == "single" else "finetune", model, task, index, cfg, None, None, None)
        reference.append(task_accuracy(model, task))
    return reference


def _load_reference_file(path: str) -> tuple[list[float], str]:
    doc = load_results(path)
    per_task = doc.get("metrics", {}).get("per_task_accuracy")
    if per_task is None:
        raise ConfigurationError(f"{path}: no per_task_accuracy in metrics (not a joint results file?)")
    return [float(v) for v in per_task], f"joint:{os.path.basename(path)}"


# --- top-level entry points ------------------------------------------------------------


def run_sequence(cfg: ExperimentConfig) -> RunRecord:
    os.makedirs(cfg.output_dir, exist_ok=True)
    dump_resolved(cfg, os.path.join(cfg.output_dir, "resolved_config.json"))
    config_hash = cfg.config_hash()
    tasks = build_tasks(cfg)
    outcomes: dict[str, StrategyOutcome] = {}

    reference = None
    reference_source = None
    if cfg.reference_file is not None:
        reference, reference_source = _load_reference_file(cfg.reference_file)
    elif cfg.reference == "joint":
        joint_outcome, reference = _run_joint(tasks, cfg, config_hash)
        reference_source = "joint"
        outcomes["joint"] = joint_outcome
    else:
        reference = _run_single_task_reference(tasks, cfg)
        reference_source = "single-task"

    for strategy in cfg.strategies:
        if strategy == "joint":
            if "joint" not in outcomes:
                outcomes["joint"], _ = _run_joint(tasks, cfg, config_hash)
            continue
        try:
            outcomes[strategy] = _run_strategy(
                strategy, tasks, cfg, reference, reference_source, config_hash
            )
        except Exception as e:  # a failing strategy must not sink the others
            outcomes[strategy] = StrategyOutcome(
                strategy,
                resolve_head_mode(strategy, cfg.model.head_mode),
                error=f"{type(e).__name__}: {e}",
            )

    record = RunRecord(config_hash, cfg.output_dir, len(tasks), reference, reference_source, outcomes)
    _write_summary(record, cfg)
    return record


def _write_summary(record: RunRecord, cfg: ExperimentConfig) -> None:
    doc = {
        "schema_version": SUMMARY_SCHEMA,
        "kind": "run_summary",
        "name": cfg.name,
        "config_hash": record.config_hash,
        "task_count": record.task_count,
        "reference": record.reference,
        "reference_source": record.reference_source,
        "strategies": {
            name: {
                "head_mode": o.head_mode,
                "metrics": o.metrics or None,
                "error": o.error,
                "results": os.path.join(name, "results.json") if o.artifact_dir else None,
                "wall_time_per_task": o.wall_time_per_task,
            }
            for name, o in record.outcomes.items()
        },
    }
    atomic_write_json(doc, os.path.join(record.output_dir, "run_summary.json"))


def sweep(cfg: ExperimentConfig, grid: list[float], strategy: str = "spp") -> dict:
    """Greedy lambda search on a 10% validation split carved from training data.

    The real test sets are never consulted.  Returns per-lambda ACC plus the
    SGD baseline on the same carved tasks, and writes sweep.json/sweep.csv.
    """
    if strategy not in CONSOLIDATING:
        raise ConfigurationError(f"sweep needs a consolidating strategy, got {strategy!r}")
    os.makedirs(cfg.output_dir, exist_ok=True)
    tasks = build_tasks(cfg)
    carved = []
    for task in tasks:
        n = len(task.train)
        n_val = max(1, n // 10)
        order = derive_rng(cfg.seeds.data, SWEEP_SPLIT, task.spec.task_id).permutation(n)
        val_rows, train_rows = np.sort(order[:n_val]), np.sort(order[n_val:])
        train = Dataset(task.train.images[train_rows], task.train.labels[train_rows],
                        task.train.class_count, "train")
        val = Dataset(task.train.images[val_rows], task.train.labels[val_rows],
                      task.train.class_count, "test")
        spec = replace(task.spec, train_size=len(train_rows), test_size=len(val_rows))
        carved.append(Task(spec, train, val))

    config_hash = cfg.config_hash()
    sweep_dir = os.path.join(cfg.output_dir, "sweep")
    results = []

    base_cfg = replace(cfg, output_dir=os.path.join(sweep_dir, "sgd"))
    sgd_outcome = _run_strategy("sgd", carved, base_cfg, None, None, config_hash)
    results.append({"strategy": "sgd", "lambda": None, "ACC": sgd_outcome.metrics["ACC"],
                    "BWT": sgd_outcome.metrics["BWT"]})

    best = None
    for lam in grid:
        lam_cfg = replace(
            cfg,
            output_dir=os.path.join(sweep_dir, f"lam_{lam:g}"),
            lambdas={**cfg.lambdas, strategy: float(lam)},
        )
        outcome = _run_strategy(strategy, carved, lam_cfg, None, None, config_hash)
        entry = {"strategy": strategy, "lambda": float(lam), "ACC": outcome.metrics["ACC"],
                 "BWT": outcome.metrics["BWT"]}
        results.append(entry)
        if best is None or entry["ACC"] > best["ACC"]:
            best = entry

    doc = {
        "schema_version": SUMMARY_SCHEMA,
        "kind": "sweep",
        "strategy": strategy,
        "grid": [float(g) for g in grid],
        "results": results,
        "best_lambda": best["lambda"],
        "config_hash": config_hash,
    }
    atomic_write_json(doc, os.path.join(cfg.output_dir, "sweep.json"))
    import csv as _csv
    with open(os.path.join(cfg.output_dir, "sweep.csv"), "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["strategy", "lambda", "acc", "bwt"])
        for r in results:
            w.writerow([
                r["strategy"],
                "" if r["lambda"] is None else repr(r["lambda"]),
                repr(r["ACC"]),
                "" if r["BWT"] is None else repr(r["BWT"]),
            ])
    return doc


# --- analyze: emit analysis CSVs from stored artifacts -----------------------------------


def _strategy_dirs(run_dir: str):
    with open(os.path.join(run_dir, "run_summary.json")) as f:
        summary = json.load(f)
    return {
        name: os.path.join(run_dir, name)
        for name, entry in summary["strategies"].items()
        if entry.get("error") is None and entry.get("results")
    }, summary


def saliency_retention_distances(strategy_dir: str, task_count: int, bins: int = analysis.DEFAULT_BINS) -> dict[str, float]:
    """Frechet distance, per trunk layer, between the task-1 saliency
    distribution measured after task 1 and after the final task."""
    first, _ = load_importance_snapshot(os.path.join(strategy_dir, "diag_saliency_task1_after1.json"))
    last, _ = load_importance_snapshot(
        os.path.join(strategy_dir, f"diag_saliency_task1_after{task_count}.json")
    )
    out = {}
    layers = [name for name in first if name.startswith("trunk.") and name.endswith(".weight")]
    for layer in layers:
        lo, hi = analysis.auto_range(np.concatenate([first[layer].ravel(), last[layer].ravel()]))
        h1 = analysis.importance_histogram(first[layer], bins, (lo, hi), {"layer": layer, "task": 1})
        h2 = analysis.importance_histogram(last[layer], bins, (lo, hi), {"layer": layer, "task": task_count})
        out[layer] = analysis.frechet_distance(h1, h2)
    return out


def analyze_run(run_dir: str, bins: int = analysis.DEFAULT_BINS) -> str:
    """Emit histogram / frechet / change-map CSVs into run_dir/analysis."""
    dirs, summary = _strategy_dirs(run_dir)
    task_count = summary["task_count"]
    outdir = os.path.join(run_dir, "analysis")
    os.makedirs(outdir, exist_ok=True)

    # importance histograms on bins shared across strategies per (task, layer)
    histograms = []
    for task_id in range(1, task_count + 1):
        per_strategy = {}
        for name, d in dirs.items():
            path = os.path.join(d, f"importance_task{task_id}.json")
            if os.path.exists(path):
                per_strategy[name], _ = load_importance_snapshot(path)
        if not per_strategy:
            continue
        layer_names = ["pooled"] + sorted(
            {k for t in per_strategy.values() for k in t if k.startswith("trunk.") and k.endswith(".weight")}
        )
        for layer in layer_names:
            values = {
                s: (t if layer == "pooled" else {layer: t[layer]})
                for s, t in per_strategy.items()
            }
            lo, hi = analysis.auto_range(
                np.concatenate([analysis.pool_values(v) for v in values.values()])
            )
            for s, v in values.items():
                histograms.append(
                    analysis.importance_histogram(
                        v, bins, (lo, hi), {"method": s, "task": task_id, "layer": layer}
                    )
                )
    analysis.write_histogram_csv(histograms, os.path.join(outdir, "histograms.csv"))

    for name, d in dirs.items():
        if name == "joint" or task_count < 2:
            continue
        if not os.path.exists(os.path.join(d, f"diag_saliency_task1_after{task_count}.json")):
            continue
        distances = saliency_retention_distances(d, task_count, bins)
        analysis.write_frechet_csv(
            [(layer, f"1-{task_count}", dist) for layer, dist in sorted(distances.items())],
            os.path.join(outdir, f"frechet_{name}.csv"),
        )

        before = load_checkpoint(os.path.join(d, "checkpoint_task1.json"))
        after = load_checkpoint(os.path.join(d, f"checkpoint_task{task_count}.json"))
        imp_path = os.path.join(d, "importance_task1.json")
        if os.path.exists(imp_path):
            omega, _ = load_importance_snapshot(imp_path)
        else:
            omega, _ = load_importance_snapshot(os.path.join(d, "diag_saliency_task1_after1.json"))
        cm = analysis.change_map(before, after, omega)
        analysis.write_change_map_csv(cm, os.path.join(outdir, f"change_map_{name}.csv"))
    return outdir
