"""Per-parameter importance: entropy-saliency pruning estimate plus baselines.

The saliency of a weight is the second-order Taylor estimate of how much the
model's output entropy would change if that weight were pruned to zero:

    delta_E_k = -g_k * w_k + 0.5 * F_k * w_k**2

where g is the gradient of the mean output entropy and F is the diagonal
Fisher approximation of the Hessian (mean per-sample squared gradient).
Only the pruned coordinate is perturbed; with a diagonal curvature estimate
the optimal off-coordinate perturbation is zero.

Also provides the EWC Fisher, MAS sensitivity and SI path-integral baselines,
clamping, and per-task accumulation into a cumulative map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError, SequencingError, ShapeError
from .nn import (
    EPS,
    GradientMap,
    ModelState,
    _forward_cache,
    atomic_write_json,
    softmax,
)

IMPORTANCE_SCHEMA = 1


@dataclass
class FisherDiagonal:
    tensors: dict[str, np.ndarray]
    sample_count: int
    objective: str  # "entropy" | "loglik"


@dataclass
class ImportanceMap:
    """Per-task maps plus their running elementwise sum.

    Task ids are 1-based and must arrive in order; every stored map has
    already been clamped to be non-negative.
    """

    per_task: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)
    cumulative: dict[str, np.ndarray] = field(default_factory=dict)
    last_task: int = 0


def _per_sample_layer_maps(model, inputs, dlogits_fn, task_id, combine):
    """Reduce per-sample rank-1 layer gradients without materializing them.

    For a dense layer the per-sample weight gradient is the outer product
    delta_n (x) h_n, so sum_n grad**2 = (D**2).T @ (H**2) and
    sum_n |grad| = |D|.T @ |H|.  Deltas are propagated signed; ``combine``
    is applied only when forming the per-layer statistic.
    """
    logits, layer_inputs, relu_masks, _ = _forward_cache(model, inputs, task_id, False, None)
    dlogits = dlogits_fn(logits)
    head = model.active_head(task_id)
    n = logits.shape[0]
    if combine == "square":
        fold = np.square
    elif combine == "abs":
        fold = np.abs
    else:
        raise ConfigurationError(f"unknown combine rule {combine!r}")

    maps = {}
    d = dlogits
    maps[f"head.{head}.weight"] = fold(d).T @ fold(layer_inputs[-1]) / n
    maps[f"head.{head}.bias"] = fold(d).sum(axis=0) / n
    dh = d @ model.heads[head].weight
    for k in range(len(model.trunk) - 1, -1, -1):
        dz = np.where(relu_masks[k], dh, 0.0)
        maps[f"trunk.{k}.weight"] = fold(dz).T @ fold(layer_inputs[k]) / n
        maps[f"trunk.{k}.bias"] = fold(dz).sum(axis=0) / n
        if k > 0:
            dh = dz @ model.trunk[k].weight
    for h, layer in model.heads.items():
        if h != head:
            maps[f"head.{h}.weight"] = np.zeros_like(layer.weight)
            maps[f"head.{h}.bias"] = np.zeros_like(layer.bias)
    return maps, logits


def fisher_diagonal(
    model: ModelState,
    inputs: np.ndarray,
    objective: str = "entropy",
    task_id: int = 1,
    labels: np.ndarray | None = None,
) -> FisherDiagonal:
    """Mean per-sample squared gradient, F_k = (1/N) sum_n g_k(x_n)**2.

    ``objective="entropy"`` uses each sample's output entropy (label free);
    ``objective="loglik"`` uses -log q of the predicted class, or of the true
    class when ``labels`` is given (the EWC variants).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.size == 0:
        raise ConfigurationError("fisher_diagonal needs a nonempty sample")
    if objective not in ("entropy", "loglik"):
        raise ConfigurationError(f"unknown fisher objective {objective!r}")

    def dlogits_fn(logits):
        probs = softmax(logits)
        if objective == "entropy":
            logq = np.log(np.clip(probs, EPS, 1.0))
            row_h = -(probs * logq).sum(axis=-1, keepdims=True)
            return -probs * (logq + row_h)
        target = np.asarray(labels) if labels is not None else probs.argmax(axis=1)
        d = probs.copy()
        d[np.arange(probs.shape[0]), target] -= 1.0
        return d

    maps, _ = _per_sample_layer_maps(model, inputs, dlogits_fn, task_id, "square")
    return FisherDiagonal(maps, inputs.shape[0], objective)


def mas_importance(model: ModelState, inputs: np.ndarray, task_id: int = 1) -> dict[str, np.ndarray]:
    """Mean |gradient| of the squared L2 norm of the outputs (MAS baseline)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.size == 0:
        raise ConfigurationError("mas_importance needs a nonempty sample")
    maps, _ = _per_sample_layer_maps(model, inputs, lambda logits: 2.0 * logits, task_id, "abs")
    return maps


def spp_saliency(
    model: ModelState,
    entropy_grad: GradientMap,
    fisher: FisherDiagonal,
) -> dict[str, np.ndarray]:
    """Taylor estimate of the entropy change from pruning each parameter."""
    saliency = {}
    for name, w in model.parameters().items():
        if name not in entropy_grad.tensors or name not in fisher.tensors:
            raise ConfigurationError(f"missing gradient/fisher entry for {name}")
        g = entropy_grad.tensors[name]
        f = fisher.tensors[name]
        if g.shape != w.shape or f.shape != w.shape:
            raise ShapeError(
                f"{name}: grad {g.shape} / fisher {f.shape} vs parameter {w.shape}"
            )
        saliency[name] = -g * w + 0.5 * f * (w * w)
    return saliency


def clamp(per_param: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Elementwise max(0, .): negative saliency means free to move."""
    return {name: np.maximum(0.0, t) for name, t in per_param.items()}


def accumulate(
    importance: ImportanceMap,
    task_id: int,
    clamped_map: dict[str, np.ndarray],
) -> ImportanceMap:
    """Store a task's clamped map and add it into the cumulative map."""
    if task_id != importance.last_task + 1:
        raise SequencingError(
            f"task {task_id} accumulated out of order (last was {importance.last_task})"
        )
    for name, t in clamped_map.items():
        if np.any(t < 0):
            raise ConfigurationError(f"map for {name} is not clamped")
    importance.per_task[task_id] = {n: t.copy() for n, t in clamped_map.items()}
    for name, t in clamped_map.items():
        if name in importance.cumulative:
            importance.cumulative[name] = importance.cumulative[name] + t
        else:
            importance.cumulative[name] = t.copy()
    importance.last_task = task_id
    return importance


# --- synaptic intelligence (SI) baseline ------------------------------------


def si_accumulator_init(model: ModelState) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in model.parameters().items()}


def si_accumulator_update(
    omega: dict[str, np.ndarray],
    grads: GradientMap,
    delta_w: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """Per-step path integral: omega_k += -g_k * delta_w_k.

    Call once per optimizer step with the pre-update gradient and the update
    that was actually applied.
    """
    for name, d in delta_w.items():
        omega[name] += -grads.tensors[name] * d
    return omega


def si_importance(
    omega: dict[str, np.ndarray],
    total_delta: dict[str, np.ndarray],
    xi: float,
) -> dict[str, np.ndarray]:
    """max(0, omega) / (total_delta**2 + xi); xi > 0 damps small-motion blowup."""
    if xi <= 0:
        raise ConfigurationError(f"SI damping xi must be positive, got {xi}")
    out = {}
    for name, w in omega.items():
        d = total_delta[name]
        out[name] = np.maximum(0.0, w) / (d * d + xi)
    return out


# --- snapshot files ----------------------------------------------------------


def save_importance_snapshot(
    tensors: dict[str, np.ndarray],
    path: str,
    task_id: int,
    objective: str,
    sample_count: int,
    seed: int,
) -> None:
    doc = {
        "schema_version": IMPORTANCE_SCHEMA,
        "kind": "importance",
        "task_id": int(task_id),
        "objective": objective,
        "sample_count": int(sample_count),
        "seed": int(seed),
        "params": {
            name: {"shape": list(t.shape), "values": t.ravel().tolist()}
            for name, t in tensors.items()
        },
    }
    atomic_write_json(doc, path)


def load_importance_snapshot(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("kind") != "importance" or doc.get("schema_version") != IMPORTANCE_SCHEMA:
        raise FormatError(f"{path}: not a schema-v{IMPORTANCE_SCHEMA} importance snapshot")
    tensors = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    meta = {k: doc[k] for k in ("task_id", "objective", "sample_count", "seed")}
    return tensors, meta
