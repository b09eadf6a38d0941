"""Quadratic weight consolidation around the previous task's parameters.

The total objective for a new task is

    L = L_new + lambda * sum_k Omega_k * (w_k - w'_k)**2

with a single anchor w' (the parameters right after the previous task) and
the cumulative importance map over all earlier tasks.  Task-specific heads
are excluded from the penalty in multi-head mode: old heads are never
updated and new heads have no anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SequencingError, ShapeError
from .importance import ImportanceMap
from .nn import GradientMap, ModelState, objective_value_and_gradients


@dataclass
class Anchor:
    """Immutable parameter snapshot taken after finishing ``task_id``."""

    params: dict[str, np.ndarray]
    task_id: int


@dataclass
class ConsolidationConfig:
    lam: float  # penalty weight (lambda)
    strategy: str = "spp"  # {spp, ewc, si, mas, none}


def take_anchor(model: ModelState, task_id: int, previous: Anchor | None = None) -> Anchor:
    """Deep, write-protected copy of the current parameters."""
    if previous is not None and previous.task_id >= task_id:
        raise SequencingError(
            f"anchor for task {task_id} requested but boundary {previous.task_id} already anchored"
        )
    params = {}
    for name, t in model.parameters().items():
        c = t.copy()
        c.flags.writeable = False
        params[name] = c
    return Anchor(params, task_id)


def penalized_names(model: ModelState) -> list[str]:
    names = []
    for i in range(len(model.trunk)):
        names += [f"trunk.{i}.weight", f"trunk.{i}.bias"]
    if model.head_mode == "single":
        names += ["head.0.weight", "head.0.bias"]
    return names


def penalty(
    model: ModelState,
    anchor: Anchor,
    importance: ImportanceMap,
    lam: float,
) -> float:
    """lambda * sum Omega_k (w_k - w'_k)**2 over the consolidated parameters."""
    if lam == 0.0:
        return 0.0
    total = 0.0
    for name in penalized_names(model):
        w = model.get_param(name)
        if name not in anchor.params:
            raise ConfigurationError(f"anchor is missing {name}")
        if name not in importance.cumulative:
            raise ConfigurationError(f"importance map is missing {name}")
        omega = importance.cumulative[name]
        ref = anchor.params[name]
        if omega.shape != w.shape or ref.shape != w.shape:
            raise ShapeError(f"{name}: importance {omega.shape} / anchor {ref.shape} vs {w.shape}")
        d = w - ref
        total += float((omega * d * d).sum())
    return lam * total


def penalty_gradients(
    model: ModelState,
    anchor: Anchor,
    importance: ImportanceMap,
    lam: float,
) -> dict[str, np.ndarray]:
    """d(penalty)/dw_k = 2*lambda*Omega_k*(w_k - w'_k)."""
    out = {}
    for name in penalized_names(model):
        w = model.get_param(name)
        omega = importance.cumulative[name]
        out[name] = 2.0 * lam * omega * (w - anchor.params[name])
    return out


def total_loss(
    model: ModelState,
    inputs: np.ndarray,
    labels: np.ndarray,
    task_id: int,
    anchor: Anchor | None,
    importance: ImportanceMap | None,
    config: ConsolidationConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, GradientMap]:
    """New-task cross-entropy plus the consolidation penalty, with gradient.

    On the first task (no anchor), or with lambda = 0, this is exactly the
    plain cross-entropy path: the penalty branch is skipped entirely so the
    update sequence stays bitwise identical to unregularized SGD.
    """
    loss, gmap = objective_value_and_gradients(
        model, inputs, labels, "cross_entropy", task_id, train, rng
    )
    if anchor is None or importance is None or config.lam == 0.0 or config.strategy == "none":
        return loss, gmap
    loss += penalty(model, anchor, importance, config.lam)
    for name, g in penalty_gradients(model, anchor, importance, config.lam).items():
        gmap.tensors[name] = gmap.tensors[name] + g
    return loss, gmap
