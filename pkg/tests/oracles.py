"""Independent oracles used by the test suite.

Everything here recomputes expected values by a route the library does not
use: extended-precision arithmetic (mpmath), central finite differences,
explicit per-sample loops, and literal zero-out pruning.  Nothing imports
the code paths it checks beyond calling the model forward/loss as a black
box where the oracle definition requires it.
"""

from __future__ import annotations

import mpmath
import numpy as np

from softprune import nn

mpmath.mp.dps = 50


def softmax_mp(logits_row):
    es = [mpmath.e**mpmath.mpf(v) for v in logits_row]
    total = mpmath.fsum(es)
    return [float(e / total) for e in es]


def cross_entropy_mp(probs, labels):
    terms = [-mpmath.log(mpmath.mpf(row[y])) for row, y in zip(probs, labels)]
    return float(mpmath.fsum(terms) / len(terms))


def entropy_mp(probs):
    rows = []
    for row in probs:
        rows.append(-mpmath.fsum(mpmath.mpf(q) * mpmath.log(mpmath.mpf(q)) for q in row if q > 0))
    return float(mpmath.fsum(rows) / len(rows))


def objective_value(model, x, y, objective, task_id=1):
    probs = nn.softmax(nn.forward(model, x, task_id))
    if objective == "cross_entropy":
        return nn.cross_entropy(probs, y)
    if objective == "entropy":
        return nn.entropy(probs)
    raise ValueError(objective)


def fd_gradients(model, x, y, objective, task_id=1, h=1e-5, loss_fn=None):
    """Central finite differences of the mean objective, parameter by parameter."""
    if loss_fn is None:
        loss_fn = lambda m: objective_value(m, x, y, objective, task_id)
    out = {}
    work = model.copy()
    for name, tensor in work.parameters().items():
        g = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn(work)
            flat[k] = orig - h
            down = loss_fn(work)
            flat[k] = orig
            gflat[k] = (up - down) / (2 * h)
        out[name] = g
    return out


def assert_grads_close(analytic, numeric, rel=1e-4, abs_floor=1e-7):
    """Every entry within rel (with an absolute floor for near-zero entries)."""
    for name, g in numeric.items():
        a = analytic[name]
        denom = np.maximum(np.abs(g), np.abs(a))
        err = np.abs(a - g)
        ok = (err <= abs_floor) | (err <= rel * denom)
        assert ok.all(), f"{name}: max rel err {np.max(err / np.maximum(denom, 1e-300))}"


def fisher_loop(model, x, objective="entropy", task_id=1, labels=None):
    """Explicit per-sample accumulation of squared gradients."""
    acc = None
    n = x.shape[0]
    for i in range(n):
        xi = x[i : i + 1]
        probs = nn.softmax(nn.forward(model, xi, task_id))
        if objective == "entropy":
            yi = np.array([0])
            _, g = nn.objective_value_and_gradients(model, xi, None, "entropy", task_id)
        else:
            target = probs.argmax(axis=1) if labels is None else labels[i : i + 1]
            _, g = nn.objective_value_and_gradients(
                model, xi, target, "cross_entropy", task_id
            )
        if acc is None:
            acc = {k: v**2 for k, v in g.tensors.items()}
        else:
            for k, v in g.tensors.items():
                acc[k] += v**2
    return {k: v / n for k, v in acc.items()}


def exact_prune_deltas(model, x, task_id=1):
    """Entropy change from literally zeroing each parameter, one at a time."""
    base = objective_value(model, x, None, "entropy", task_id)
    deltas = {}
    work = model.copy()
    for name, tensor in work.parameters().items():
        d = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        dflat = d.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = 0.0
            dflat[k] = objective_value(work, x, None, "entropy", task_id) - base
            flat[k] = orig
        deltas[name] = d
    return deltas


def population_variance_two_pass(values):
    values = list(values)
    mean = sum(values) / len(values)
    return sum((v - mean) ** 2 for v in values) / len(values)
