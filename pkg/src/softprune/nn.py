"""Dense-network engine: forward pass, losses, reverse-mode gradients, SGD.

Parameters live in float64 under stable fully-qualified names
("trunk.0.weight", "head.2.bias", ...) that checkpoints, gradient maps and
importance maps all share.  The trunk is the stack of ReLU hidden layers;
heads are linear output layers.  In single-head mode head 0 is shared by
every task; in multi-head mode each task owns one head and inactive heads
are never touched by a training step.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError, ShapeError
from .rng import HEAD, INIT, derive_rng

# Probability floor applied before any logarithm. Keeps losses and
# entropies finite without measurably biasing desk-scale results.
EPS = 1e-12

INIT_SIGMA = 0.1

CHECKPOINT_SCHEMA = 1


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy())


@dataclass
class ModelState:
    trunk: list[Layer]
    heads: dict[int, Layer]
    head_mode: str = "single"  # "single" | "multi"
    dropout_rate: float = 0.5
    arch: list[int] = field(default_factory=list)
    seed: int = 0

    def active_head(self, task_id: int) -> int:
        return 0 if self.head_mode == "single" else task_id

    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.trunk)):
            names += [f"trunk.{i}.weight", f"trunk.{i}.bias"]
        for h in sorted(self.heads):
            names += [f"head.{h}.weight", f"head.{h}.bias"]
        return names

    def get_param(self, name: str) -> np.ndarray:
        kind, idx, role = name.split(".")
        layer = self.trunk[int(idx)] if kind == "trunk" else self.heads[int(idx)]
        return layer.weight if role == "weight" else layer.bias

    def set_param(self, name: str, value: np.ndarray) -> None:
        kind, idx, role = name.split(".")
        layer = self.trunk[int(idx)] if kind == "trunk" else self.heads[int(idx)]
        if role == "weight":
            layer.weight = value
        else:
            layer.bias = value

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: self.get_param(name) for name in self.param_names()}

    def copy(self) -> "ModelState":
        return ModelState(
            trunk=[l.copy() for l in self.trunk],
            heads={h: l.copy() for h, l in self.heads.items()},
            head_mode=self.head_mode,
            dropout_rate=self.dropout_rate,
            arch=list(self.arch),
            seed=self.seed,
        )


@dataclass
class Batch:
    inputs: np.ndarray  # (n, d) in [0, 1]
    labels: np.ndarray  # (n,) ints
    task_id: int = 1


@dataclass
class GradientMap:
    """Per-parameter gradient tensors, shape-congruent with the model.

    Inactive heads carry explicit zero entries so that every parameter has
    an entry; ``sgd_step`` only applies trunk + active-head updates.
    """

    tensors: dict[str, np.ndarray]
    objective: str  # "cross_entropy" | "entropy" | "custom"
    active_head: int = 0


def init_model(
    arch: list[int],
    seed: int,
    head_mode: str = "single",
    dropout_rate: float = 0.5,
) -> ModelState:
    """Gaussian(0, 0.1) weights, zero biases, deterministic for a seed.

    ``arch[:-1]`` defines the ReLU trunk; ``arch[-1]`` is the width of head 0
    in single-head mode.  Multi-head models start with no heads; create them
    with :func:`add_head`.
    """
    if len(arch) < 2:
        raise ConfigurationError(f"arch needs at least input and output sizes, got {arch}")
    if any(int(s) <= 0 for s in arch):
        raise ConfigurationError(f"layer sizes must be positive, got {arch}")
    if head_mode not in ("single", "multi"):
        raise ConfigurationError(f"unknown head_mode {head_mode!r}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigurationError(f"dropout_rate must be in [0, 1), got {dropout_rate}")

    rng = derive_rng(seed, INIT)
    trunk = []
    for fan_in, fan_out in zip(arch[:-2], arch[1:-1]):
        trunk.append(
            Layer(
                weight=rng.normal(0.0, INIT_SIGMA, size=(fan_out, fan_in)),
                bias=np.zeros(fan_out),
            )
        )
    heads: dict[int, Layer] = {}
    if head_mode == "single":
        heads[0] = Layer(
            weight=rng.normal(0.0, INIT_SIGMA, size=(arch[-1], arch[-2])),
            bias=np.zeros(arch[-1]),
        )
    return ModelState(trunk, heads, head_mode, dropout_rate, list(arch), seed)


def add_head(model: ModelState, head_id: int, classes: int) -> ModelState:
    """Attach a fresh head; init stream depends only on (model.seed, head_id)."""
    if head_id in model.heads:
        raise ConfigurationError(f"head {head_id} already exists")
    if classes <= 0:
        raise ConfigurationError(f"head needs a positive class count, got {classes}")
    rng = derive_rng(model.seed, HEAD, head_id)
    fan_in = model.arch[-2]
    model.heads[head_id] = Layer(
        weight=rng.normal(0.0, INIT_SIGMA, size=(classes, fan_in)),
        bias=np.zeros(classes),
    )
    return model


def _check_head(model: ModelState, task_id: int) -> int:
    head = model.active_head(task_id)
    if head not in model.heads:
        raise ConfigurationError(f"no head {head} for task {task_id} (heads: {sorted(model.heads)})")
    return head


def _forward_cache(model, inputs, task_id, train, rng):
    """Forward pass keeping what backprop needs.

    Returns (logits, layer_inputs, relu_masks, drop_scales) where
    layer_inputs[k] is the input to trunk layer k (layer_inputs[-1] feeds the
    head) and drop_scales[k] is the inverted-dropout multiplier applied after
    ReLU (None when dropout is off).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.arch[0]:
        raise ShapeError(
            f"inputs shape {inputs.shape} does not match input width {model.arch[0]}"
        )
    head = _check_head(model, task_id)
    use_dropout = train and model.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ConfigurationError("training-mode forward with dropout needs an rng")

    h = inputs
    layer_inputs = [h]
    relu_masks = []
    drop_scales = []
    for layer in model.trunk:
        z = h @ layer.weight.T + layer.bias
        mask = z > 0.0
        h = np.where(mask, z, 0.0)
        if use_dropout:
            keep = rng.random(h.shape) >= model.dropout_rate
            scale = keep / (1.0 - model.dropout_rate)
            h = h * scale
        else:
            scale = None
        relu_masks.append(mask)
        drop_scales.append(scale)
        layer_inputs.append(h)
    logits = h @ model.heads[head].weight.T + model.heads[head].bias
    return logits, layer_inputs, relu_masks, drop_scales


def forward(
    model: ModelState,
    inputs: np.ndarray,
    task_id: int = 1,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Logits for a batch. Deterministic whenever ``train`` is False."""
    logits, _, _, _ = _forward_cache(model, inputs, task_id, train, rng)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean -log q[label]; epsilon-clamped so it is always finite and >= 0."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.clip(picked, EPS, 1.0)).mean())


def entropy(probs: np.ndarray) -> float:
    """Mean Shannon entropy of the rows, in nats; lies in [0, ln C]."""
    probs = np.asarray(probs, dtype=np.float64)
    logq = np.log(np.clip(probs, EPS, 1.0))
    return float(-(probs * logq).sum(axis=-1).mean())


def _objective_dlogits(objective, probs, labels):
    """Per-sample d(objective)/d(logits); caller scales for batch means."""
    if objective == "cross_entropy":
        if labels is None:
            raise ConfigurationError("cross_entropy objective needs labels")
        d = probs.copy()
        d[np.arange(probs.shape[0]), np.asarray(labels)] -= 1.0
        return d
    if objective == "entropy":
        logq = np.log(np.clip(probs, EPS, 1.0))
        row_h = -(probs * logq).sum(axis=-1, keepdims=True)
        return -probs * (logq + row_h)
    raise ConfigurationError(f"unknown objective {objective!r}")


def _backward(model, head, layer_inputs, relu_masks, drop_scales, dlogits):
    """Backprop per-batch deltas into a name->gradient dict (trunk + head)."""
    grads = {}
    grads[f"head.{head}.weight"] = dlogits.T @ layer_inputs[-1]
    grads[f"head.{head}.bias"] = dlogits.sum(axis=0)
    dh = dlogits @ model.heads[head].weight
    for k in range(len(model.trunk) - 1, -1, -1):
        if drop_scales[k] is not None:
            dh = dh * drop_scales[k]
        dz = np.where(relu_masks[k], dh, 0.0)
        grads[f"trunk.{k}.weight"] = dz.T @ layer_inputs[k]
        grads[f"trunk.{k}.bias"] = dz.sum(axis=0)
        if k > 0:
            dh = dz @ model.trunk[k].weight
    return grads


def _fill_inactive(model, grads, head):
    for h, layer in model.heads.items():
        if h != head:
            grads[f"head.{h}.weight"] = np.zeros_like(layer.weight)
            grads[f"head.{h}.bias"] = np.zeros_like(layer.bias)
    return grads


def objective_value_and_gradients(
    model: ModelState,
    inputs: np.ndarray,
    labels: np.ndarray | None,
    objective: str,
    task_id: int = 1,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, GradientMap]:
    """Mean objective over the batch plus its reverse-mode gradient."""
    if objective == "entropy" and train:
        raise ConfigurationError("entropy objective uses evaluation-mode statistics")
    n = np.asarray(inputs).shape[0]
    if n == 0:
        raise ConfigurationError("empty batch")
    logits, layer_inputs, relu_masks, drop_scales = _forward_cache(
        model, inputs, task_id, train, rng
    )
    probs = softmax(logits)
    if objective == "cross_entropy":
        value = cross_entropy(probs, labels)
    elif objective == "entropy":
        value = entropy(probs)
    else:
        raise ConfigurationError(f"unknown objective {objective!r}")
    dlogits = _objective_dlogits(objective, probs, labels) / n
    head = model.active_head(task_id)
    grads = _backward(model, head, layer_inputs, relu_masks, drop_scales, dlogits)
    _fill_inactive(model, grads, head)
    return value, GradientMap(grads, objective, head)


def gradients(
    model: ModelState,
    batch: Batch,
    objective: str,
    task_id: int | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> GradientMap:
    """Gradient of the mean objective over the batch."""
    tid = batch.task_id if task_id is None else task_id
    _, gmap = objective_value_and_gradients(
        model, batch.inputs, batch.labels, objective, tid, train, rng
    )
    return gmap


def sgd_step(model: ModelState, grads: GradientMap, lr: float) -> ModelState:
    """In-place w <- w - lr*g on the trunk and the active head only."""
    if lr < 0:
        raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
    head = grads.active_head
    for i, layer in enumerate(model.trunk):
        layer.weight -= lr * grads.tensors[f"trunk.{i}.weight"]
        layer.bias -= lr * grads.tensors[f"trunk.{i}.bias"]
    layer = model.heads[head]
    layer.weight -= lr * grads.tensors[f"head.{head}.weight"]
    layer.bias -= lr * grads.tensors[f"head.{head}.bias"]
    return model


def lr_schedule(initial_lr: float, step: int, decay_every: int, ratio: float) -> float:
    """Staircase decay: initial_lr * ratio**(step // decay_every)."""
    if initial_lr <= 0:
        raise ConfigurationError(f"initial_lr must be positive, got {initial_lr}")
    if not 0.0 < ratio <= 1.0:
        raise ConfigurationError(f"decay ratio must be in (0, 1], got {ratio}")
    if decay_every < 1:
        raise ConfigurationError(f"decay_every must be >= 1, got {decay_every}")
    return initial_lr * ratio ** (step // decay_every)


# --- checkpoint file -------------------------------------------------------


def atomic_write_json(doc: dict, path: str) -> None:
    """Write JSON via temp file + rename so readers never see a torn file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(doc, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(model: ModelState, path: str) -> None:
    """One JSON document: architecture metadata plus named row-major tensors."""
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "kind": "checkpoint",
        "arch": list(model.arch),
        "head_mode": model.head_mode,
        "dropout_rate": model.dropout_rate,
        "seed": model.seed,
        "head_sizes": {str(h): int(l.weight.shape[0]) for h, l in model.heads.items()},
        "params": {
            name: {"shape": list(t.shape), "values": t.ravel().tolist()}
            for name, t in model.parameters().items()
        },
    }
    atomic_write_json(doc, path)


def load_checkpoint(path: str) -> ModelState:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("kind") != "checkpoint" or doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise FormatError(f"{path}: not a schema-v{CHECKPOINT_SCHEMA} checkpoint")
    arch = [int(s) for s in doc["arch"]]
    model = ModelState(
        trunk=[],
        heads={},
        head_mode=doc["head_mode"],
        dropout_rate=float(doc["dropout_rate"]),
        arch=arch,
        seed=int(doc["seed"]),
    )
    for fan_in, fan_out in zip(arch[:-2], arch[1:-1]):
        model.trunk.append(Layer(np.zeros((fan_out, fan_in)), np.zeros(fan_out)))
    for h, classes in doc["head_sizes"].items():
        model.heads[int(h)] = Layer(np.zeros((int(classes), arch[-2])), np.zeros(int(classes)))
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise FormatError(f"{path}: parameter {name} has {values.size} values for shape {shape}")
        target = model.get_param(name)
        if target.shape != shape:
            raise FormatError(f"{path}: parameter {name} shape {shape} != expected {target.shape}")
        model.set_param(name, values.reshape(shape))
    return model
