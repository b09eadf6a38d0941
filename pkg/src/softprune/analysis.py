"""Diagnostics: importance histograms, Frechet distances, parameter-change maps.

The "distance between importance distributions" is the discrete Frechet
distance between the polylines {(bin_center_b, density_b)} of two histograms
computed on shared bin edges.  Binning defaults: 100 bins over
[0, 99.5th percentile of the union], recorded in the emitted tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .nn import ModelState

DEFAULT_BINS = 100
UPPER_PERCENTILE = 99.5


@dataclass
class Histogram:
    bin_edges: np.ndarray  # (B+1,) ascending
    densities: np.ndarray  # (B,) >= 0, integrates to 1
    source: dict  # tags: method / task / layer


@dataclass
class ChangeMap:
    layers: dict[str, np.ndarray]  # |w_after - w_before| per weight matrix
    importance: dict[str, np.ndarray]  # matching importance matrices
    weighted_change: dict[str, float]  # sum_k Omega_k * (dw_k)^2 per layer


def pool_values(values) -> np.ndarray:
    if isinstance(values, dict):
        arrays = [np.asarray(v).ravel() for v in values.values()]
        flat = np.concatenate(arrays) if arrays else np.array([])
    else:
        flat = np.asarray(values).ravel()
    if flat.size == 0:
        raise ConfigurationError("cannot histogram an empty importance map")
    return flat.astype(np.float64)


def auto_range(values, upper_percentile: float = UPPER_PERCENTILE) -> tuple[float, float]:
    """[0, upper percentile of the pooled values], degenerate ranges widened."""
    flat = pool_values(values)
    hi = float(np.percentile(flat, upper_percentile))
    if hi <= 0.0:
        hi = max(float(flat.max()), 1e-12)
    return 0.0, hi


def importance_histogram(values, bins: int, value_range: tuple[float, float], source: dict | None = None) -> Histogram:
    """Density-normalized histogram; out-of-range values land in the end bins."""
    if bins < 2:
        raise ConfigurationError(f"need at least 2 bins, got {bins}")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not hi > lo:
        raise ConfigurationError(f"empty histogram range [{lo}, {hi}]")
    flat = np.clip(pool_values(values), lo, hi)
    counts, edges = np.histogram(flat, bins=bins, range=(lo, hi))
    width = (hi - lo) / bins
    densities = counts / (counts.sum() * width)
    return Histogram(edges, densities, source or {})


def frechet_distance(h1: Histogram, h2: Histogram) -> float:
    """Discrete Frechet distance between the two density polylines."""
    if h1.bin_edges.shape != h2.bin_edges.shape or not np.allclose(
        h1.bin_edges, h2.bin_edges, rtol=0, atol=1e-12
    ):
        raise ConfigurationError("histograms do not share bin edges")
    centers = 0.5 * (h1.bin_edges[:-1] + h1.bin_edges[1:])
    p = np.column_stack([centers, h1.densities])
    q = np.column_stack([centers, h2.densities])
    d = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2))
    n, m = d.shape
    a = np.empty((n, m))
    a[0, 0] = d[0, 0]
    for i in range(1, n):
        a[i, 0] = max(a[i - 1, 0], d[i, 0])
    for j in range(1, m):
        a[0, j] = max(a[0, j - 1], d[0, j])
    for i in range(1, n):
        for j in range(1, m):
            a[i, j] = max(min(a[i - 1, j], a[i - 1, j - 1], a[i, j - 1]), d[i, j])
    return float(a[-1, -1])


def change_map(before: ModelState, after: ModelState, importance: dict[str, np.ndarray]) -> ChangeMap:
    """Per-layer |delta w| matrices with the matching importance, plus the
    importance-weighted squared change per trunk weight matrix."""
    layers = {}
    imp = {}
    weighted = {}
    for i in range(len(before.trunk)):
        name = f"trunk.{i}.weight"
        b = before.trunk[i].weight
        a = after.trunk[i].weight
        if a.shape != b.shape:
            raise ShapeError(f"{name}: before {b.shape} vs after {a.shape}")
        omega = importance.get(name)
        if omega is None:
            raise ConfigurationError(f"importance map is missing {name}")
        if omega.shape != b.shape:
            raise ShapeError(f"{name}: importance {omega.shape} vs weights {b.shape}")
        delta = np.abs(a - b)
        layers[name] = delta
        imp[name] = omega.copy()
        weighted[name] = float((omega * (a - b) ** 2).sum())
    return ChangeMap(layers, imp, weighted)


# --- CSV emissions -----------------------------------------------------------


def write_histogram_csv(histograms: list[Histogram], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "task", "layer", "bin_left", "bin_right", "density"])
        for h in histograms:
            for left, right, density in zip(h.bin_edges[:-1], h.bin_edges[1:], h.densities):
                w.writerow(
                    [
                        h.source.get("method", ""),
                        h.source.get("task", ""),
                        h.source.get("layer", ""),
                        repr(float(left)),
                        repr(float(right)),
                        repr(float(density)),
                    ]
                )


def write_frechet_csv(rows: list[tuple[str, str, float]], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer", "task_pair", "distance"])
        for layer, pair, distance in rows:
            w.writerow([layer, pair, repr(float(distance))])


def write_change_map_csv(cm: ChangeMap, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer", "row", "col", "abs_change", "importance"])
        for layer, delta in cm.layers.items():
            omega = cm.importance[layer]
            rows, cols = delta.shape
            for r in range(rows):
                for c in range(cols):
                    w.writerow([layer, r, c, repr(float(delta[r, c])), repr(float(omega[r, c]))])
