import csv

import numpy as np
import pytest

from softprune import nn
from softprune.analysis import (
    Histogram,
    auto_range,
    change_map,
    frechet_distance,
    importance_histogram,
    write_change_map_csv,
    write_frechet_csv,
    write_histogram_csv,
)
from softprune.errors import ConfigurationError, ShapeError


def hist_of(values, bins=10, rng=(0.0, 1.0), **source):
    return importance_histogram(np.asarray(values, dtype=float), bins, rng, source)


# --- importance_histogram ------------------------------------------------------


def test_histogram_point_mass_single_bin():
    h = hist_of(np.full(50, 0.45), bins=10)
    nonzero = np.flatnonzero(h.densities)
    assert len(nonzero) == 1
    assert h.bin_edges[nonzero[0]] <= 0.45 < h.bin_edges[nonzero[0] + 1]


def test_histogram_total_mass_is_one():
    rng = np.random.default_rng(0)
    for _ in range(5):
        h = hist_of(rng.exponential(0.2, size=200), bins=17, rng=(0.0, 0.5))
        width = np.diff(h.bin_edges)
        assert (h.densities * width).sum() == pytest.approx(1.0, abs=1e-9)


def test_histogram_uniform_values_near_flat():
    # chi-square sanity over 10 seeds: uniform draws should not deviate wildly
    bins = 10
    n = 2000
    chis = []
    for seed in range(10):
        values = np.random.default_rng(seed).uniform(0, 1, n)
        h = hist_of(values, bins=bins)
        counts = h.densities * (1.0 / bins) * n
        expected = n / bins
        chis.append(((counts - expected) ** 2 / expected).sum())
    # chi2(9 dof): mean 9, sd ~4.2; the average over 10 seeds stays well below 20
    assert np.mean(chis) < 20


def test_histogram_clips_out_of_range_into_end_bins():
    values = np.array([-5.0, 0.5, 99.0])
    h = hist_of(values, bins=4, rng=(0.0, 1.0))
    width = 0.25
    assert h.densities[0] * width == pytest.approx(1 / 3)
    assert h.densities[-1] * width == pytest.approx(1 / 3)


def test_histogram_rejects_empty_and_bad_bins():
    with pytest.raises(ConfigurationError):
        importance_histogram(np.array([]), 10, (0, 1))
    with pytest.raises(ConfigurationError):
        importance_histogram(np.ones(3), 1, (0, 1))


def test_auto_range_uses_upper_percentile():
    values = np.concatenate([np.linspace(0, 1, 999), [100.0]])
    lo, hi = auto_range(values)
    assert lo == 0.0
    assert hi < 2.0  # the outlier is cut off


def test_histogram_pools_dict_values():
    h = importance_histogram({"a": np.zeros((2, 2)), "b": np.ones(4)}, 2, (0.0, 1.0))
    assert h.densities[0] == pytest.approx(1.0)  # density 0.5/width(0.5) per half
    assert h.densities[1] == pytest.approx(1.0)


# --- frechet_distance ------------------------------------------------------------


def test_frechet_identity_and_symmetry():
    rng = np.random.default_rng(1)
    h1 = hist_of(rng.random(100))
    h2 = hist_of(rng.random(100))
    assert frechet_distance(h1, h1) == 0.0
    assert frechet_distance(h1, h2) == frechet_distance(h2, h1)
    assert frechet_distance(h1, h2) >= 0.0


def test_frechet_hand_executed_dp_case():
    # polylines P=[(0,0),(1,2),(2,0),(3,1)], Q=[(0,1),(1,0),(2,2),(3,0)]
    # hand-run of the DP recurrence gives exactly 1.0
    edges = np.array([-0.5, 0.5, 1.5, 2.5, 3.5])
    p = Histogram(edges, np.array([0.0, 2.0, 0.0, 1.0]), {})
    q = Histogram(edges, np.array([1.0, 0.0, 2.0, 0.0]), {})
    assert frechet_distance(p, q) == 1.0


def test_frechet_mismatched_edges_rejected():
    h1 = Histogram(np.array([0.0, 0.5, 1.0]), np.array([1.0, 1.0]), {})
    h2 = Histogram(np.array([0.0, 0.6, 1.2]), np.array([1.0, 0.666]), {})
    with pytest.raises(ConfigurationError):
        frechet_distance(h1, h2)


def test_frechet_triangle_inequality_spot_check():
    rng = np.random.default_rng(3)
    for _ in range(10):
        hs = [hist_of(rng.exponential(1.0, 60), bins=8, rng=(0.0, 3.0)) for _ in range(3)]
        d01 = frechet_distance(hs[0], hs[1])
        d12 = frechet_distance(hs[1], hs[2])
        d02 = frechet_distance(hs[0], hs[2])
        assert d02 <= d01 + d12 + 1e-12


# --- change_map -------------------------------------------------------------------


def two_models():
    before = nn.init_model([4, 3, 2], seed=1, dropout_rate=0.0)
    after = before.copy()
    return before, after


def test_change_map_zero_when_identical():
    before, after = two_models()
    imp = {"trunk.0.weight": np.ones_like(before.trunk[0].weight)}
    cm = change_map(before, after, imp)
    assert np.all(cm.layers["trunk.0.weight"] == 0.0)
    assert cm.weighted_change["trunk.0.weight"] == 0.0


def test_change_map_importance_masks_change():
    # Omega=[1,0], dw=[0.2,5] -> weighted change 1*0.04 + 0*25 = 0.04
    before = nn.init_model([2, 1, 1], seed=0, dropout_rate=0.0)
    before.trunk[0].weight[...] = 0.0
    after = before.copy()
    after.trunk[0].weight[0, 0] = 0.2
    after.trunk[0].weight[0, 1] = 5.0
    imp = {"trunk.0.weight": np.array([[1.0, 0.0]])}
    cm = change_map(before, after, imp)
    assert cm.weighted_change["trunk.0.weight"] == pytest.approx(0.04, rel=1e-12)


def test_change_map_matches_loop_oracle():
    rng = np.random.default_rng(4)
    before, after = two_models()
    for t in after.parameters().values():
        t += 0.1 * rng.standard_normal(t.shape)
    imp = {"trunk.0.weight": rng.random(before.trunk[0].weight.shape)}
    cm = change_map(before, after, imp)
    total = 0.0
    b, a, o = before.trunk[0].weight, after.trunk[0].weight, imp["trunk.0.weight"]
    for r in range(b.shape[0]):
        for c in range(b.shape[1]):
            assert cm.layers["trunk.0.weight"][r, c] == abs(a[r, c] - b[r, c])
            total += o[r, c] * (a[r, c] - b[r, c]) ** 2
    assert cm.weighted_change["trunk.0.weight"] == pytest.approx(total, abs=1e-12)


def test_change_map_permutation_invariance():
    rng = np.random.default_rng(5)
    before = nn.init_model([3, 3, 2], seed=2, dropout_rate=0.0)
    after = before.copy()
    for t in after.parameters().values():
        t += 0.2 * rng.standard_normal(t.shape)
    imp = {"trunk.0.weight": rng.random((3, 3))}
    base = change_map(before, after, imp).weighted_change["trunk.0.weight"]

    perm = rng.permutation(3)
    ix = np.ix_(perm, perm)
    before_p = before.copy()
    after_p = after.copy()
    before_p.trunk[0].weight = before.trunk[0].weight[ix]
    after_p.trunk[0].weight = after.trunk[0].weight[ix]
    permuted = change_map(before_p, after_p, {"trunk.0.weight": imp["trunk.0.weight"][ix]})
    assert permuted.weighted_change["trunk.0.weight"] == pytest.approx(base, rel=1e-12)


def test_change_map_shape_mismatch():
    before, after = two_models()
    with pytest.raises(ConfigurationError):
        change_map(before, after, {})
    with pytest.raises(ShapeError):
        change_map(before, after, {"trunk.0.weight": np.zeros((1, 1))})


# --- CSV emissions ------------------------------------------------------------------


def test_csv_schemas(tmp_path):
    h = hist_of(np.random.default_rng(0).random(50), bins=4, method="spp", task=1, layer="pooled")
    hist_path = str(tmp_path / "hist.csv")
    write_histogram_csv([h], hist_path)
    with open(hist_path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["method", "task", "layer", "bin_left", "bin_right", "density"]
    assert len(rows) == 5
    total = sum(
        float(r[5]) * (float(r[4]) - float(r[3])) for r in rows[1:]
    )
    assert total == pytest.approx(1.0, abs=1e-9)

    fre_path = str(tmp_path / "frechet.csv")
    write_frechet_csv([("trunk.1.weight", "1-3", 0.25)], fre_path)
    with open(fre_path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["layer", "task_pair", "distance"]
    assert rows[1] == ["trunk.1.weight", "1-3", "0.25"]

    before = nn.init_model([2, 2, 2], seed=0, dropout_rate=0.0)
    after = before.copy()
    after.trunk[0].weight += 1.0
    cm = change_map(before, after, {"trunk.0.weight": np.ones((2, 2))})
    cm_path = str(tmp_path / "cm.csv")
    write_change_map_csv(cm, cm_path)
    with open(cm_path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["layer", "row", "col", "abs_change", "importance"]
    assert len(rows) == 5
    assert float(rows[1][3]) == 1.0
