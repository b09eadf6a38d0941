import numpy as np
import pytest

from oracles import population_variance_two_pass
from softprune import nn
from softprune.data import Dataset, Task, TaskSpec
from softprune.errors import ConfigurationError, StateError, UndefinedMetricError
from softprune.metrics import (
    AccuracyMatrix,
    acc,
    bwt,
    evaluate_row,
    fwt,
    load_results,
    save_results,
    smt,
    summarize,
    task_accuracy,
)


def matrix_from(rows, reference=None, source="joint"):
    t = len(rows)
    m = AccuracyMatrix(t)
    for j, row in enumerate(rows, start=1):
        for i, v in enumerate(row, start=1):
            if v is not None:
                m.set(j, i, v)
    if reference is not None:
        m.set_reference(reference, source)
    return m


def onehot_task(n=20, classes=3, seed=0, task_id=1):
    """Inputs are one-hot rows of the label: an identity head classifies them."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    images = np.eye(classes)[labels]
    ds = Dataset(images, labels, classes, "test")
    spec = TaskSpec(task_id=task_id, kind="split", source="fixture", head_id=task_id)
    return Task(spec, ds, ds)


# --- evaluate_row ------------------------------------------------------------


def identity_model(classes=3):
    model = nn.init_model([classes, classes], seed=0)
    model.heads[0].weight[...] = np.eye(classes)
    model.heads[0].bias[...] = 0.0
    return model


def test_evaluate_row_perfect_classifier():
    tasks = [onehot_task(task_id=1), onehot_task(seed=1, task_id=2)]
    matrix = AccuracyMatrix(2)
    model = identity_model()
    evaluate_row(model, tasks, 2, matrix)
    assert matrix.get(2, 1) == 1.0
    assert matrix.get(2, 2) == 1.0


def test_evaluate_row_majority_stub_chance_level():
    # constant-argmax model on an exactly balanced 10-class task -> 0.10
    labels = np.tile(np.arange(10), 10)
    ds = Dataset(np.random.default_rng(0).random((100, 4)), labels, 10, "test")
    task = Task(TaskSpec(1, "permuted", "fixture", 1), ds, ds)
    model = nn.init_model([4, 10], seed=0)
    model.heads[0].weight[...] = 0.0
    model.heads[0].bias[...] = 0.0
    model.heads[0].bias[7] = 1.0  # always predicts class 7
    assert task_accuracy(model, task) == pytest.approx(0.1)


def test_evaluate_row_hand_counted_fixture():
    task = onehot_task(n=20, seed=3)
    model = identity_model()
    # corrupt the head so class 2 rows are predicted as class 0
    model.heads[0].weight[2, 2] = -1.0
    logits = nn.forward(model, task.test.images)
    expected = float((logits.argmax(1) == task.test.labels).mean())
    by_hand = sum(
        1 for lbl in task.test.labels if lbl != 2
    ) / 20  # class-2 rows all wrong, others right
    assert task_accuracy(model, task) == expected == by_hand


def test_task_accuracy_single_head_uses_global_labels():
    # split task [4, 7]: remapped labels 0/1, single head scores classes 4/7
    labels = np.array([0, 1, 0, 1])
    images = np.zeros((4, 2))
    images[:, 0] = labels  # feature equals remapped label
    ds = Dataset(images, labels, 2, "test")
    spec = TaskSpec(1, "split", "fixture", 1, class_subset=[4, 7])
    task = Task(spec, ds, ds)
    model = nn.init_model([2, 10], seed=0)
    model.heads[0].weight[...] = 0.0
    model.heads[0].bias[...] = 0.0
    model.heads[0].weight[4, 0] = -5.0  # feature 0 -> logit for class 4 low when 1
    model.heads[0].bias[4] = 1.0  # feature 0 == 0 -> class 4 wins
    model.heads[0].weight[7, 0] = 5.0  # feature 0 == 1 -> class 7 wins
    assert task_accuracy(model, task) == 1.0


def test_evaluate_row_missing_test_set():
    spec = TaskSpec(1, "split", "fixture", 1)
    empty = Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int), 3, "test")
    task = Task(spec, empty, empty)
    with pytest.raises(ConfigurationError):
        task_accuracy(identity_model(), task)


# --- acc / fwt / bwt / smt -----------------------------------------------------


def test_acc_arithmetic():
    m = matrix_from([[0.9, None, None], [0.8, 0.85, None], [0.9, 0.8, 1.0]])
    assert acc(m) == pytest.approx((0.9 + 0.8 + 1.0) / 3, rel=1e-15)


def test_acc_constant_matrix():
    m = matrix_from([[0.7, None], [0.7, 0.7]])
    assert acc(m) == pytest.approx(0.7, rel=1e-15)


def test_acc_incomplete_final_row():
    m = AccuracyMatrix(2)
    m.set(1, 1, 0.5)
    m.set(2, 2, 0.5)
    with pytest.raises(StateError):
        acc(m)


def test_fwt_reference_parity_and_arithmetic():
    m = matrix_from(
        [[0.9, None, None], [0.8, 0.8, None], [0.7, 0.7, 0.7]],
        reference=[0.9, 0.8, 0.7],
    )
    assert fwt(m) == pytest.approx(0.0, abs=1e-15)
    m2 = matrix_from(
        [[0.9, None, None], [0.5, 0.8, None], [0.4, 0.4, 0.7]],
        reference=[0.95, 0.85, 0.75],
    )
    assert fwt(m2) == pytest.approx(((0.9 - 0.95) + (0.8 - 0.85)) / 2, rel=1e-12)


def test_fwt_missing_reference_names_task():
    m = matrix_from([[0.9, None], [0.8, 0.8]])
    m.reference[0] = 0.9  # m[2] still missing but unused; m[1] present
    assert fwt(m) == pytest.approx(0.0, abs=1e-15)
    m.reference[0] = np.nan
    with pytest.raises(ConfigurationError, match=r"m\[1\]"):
        fwt(m)


def test_bwt_arithmetic_and_guard():
    m = matrix_from([[0.9, None], [0.5, 0.95]])
    assert bwt(m) == pytest.approx(-0.4, rel=1e-12)
    with pytest.raises(UndefinedMetricError):
        bwt(matrix_from([[0.9]]))


def test_bwt_no_forgetting_zero():
    m = matrix_from([[0.8, None, None], [0.8, 0.9, None], [0.8, 0.9, 0.7]])
    assert bwt(m) == 0.0


def test_bwt_nonpositive_when_no_column_improves():
    # implication, not unconditional: if P[T][i] <= P[i][i] for all i, bwt <= 0
    rng = np.random.default_rng(23)
    for _ in range(25):
        t = int(rng.integers(2, 6))
        m = AccuracyMatrix(t)
        for j in range(1, t + 1):
            for i in range(1, j + 1):
                m.set(j, i, rng.random())
        for i in range(1, t):
            m.set(t, i, min(m.get(t, i), m.get(i, i)))
        assert bwt(m) <= 0.0


def test_smt_examples():
    const = matrix_from([[0.8, None, None], [0.8, 0.9, None], [0.8, 0.9, 0.7]])
    assert smt(const) == 0.0
    two = matrix_from([[0.9, None], [0.7, 0.8]])
    assert smt(two) == pytest.approx(0.01, rel=1e-12)
    with pytest.raises(UndefinedMetricError):
        smt(matrix_from([[1.0]]))


def test_smt_matches_two_pass_variance_oracle():
    rng = np.random.default_rng(17)
    rows = [[rng.random() for _ in range(j + 1)] for j in range(4)]
    m = matrix_from(rows)
    expected = 0.0
    for j in range(1, 4):
        column = [m.get(k, j) for k in range(j, 5)]
        expected += population_variance_two_pass(column)
    expected /= 3
    assert smt(m) == pytest.approx(expected, abs=1e-12)


def test_hand_computed_three_by_three():
    m = matrix_from(
        [[0.9, None, None], [0.8, 0.85, None], [0.7, 0.8, 0.95]],
        reference=[0.95, 0.9, 0.85],
    )
    assert acc(m) == pytest.approx((0.7 + 0.8 + 0.95) / 3, rel=1e-15)
    assert bwt(m) == pytest.approx(((0.7 - 0.9) + (0.8 - 0.85)) / 2, rel=1e-12)
    assert fwt(m) == pytest.approx(((0.9 - 0.95) + (0.85 - 0.9)) / 2, rel=1e-12)
    d1 = population_variance_two_pass([0.9, 0.8, 0.7])
    d2 = population_variance_two_pass([0.85, 0.8])
    assert smt(m) == pytest.approx((d1 + d2) / 2, rel=1e-12)


def test_metrics_invariant_under_class_relabeling():
    # permuting class ids consistently in the labels and the head leaves every
    # accuracy entry, and hence acc/fwt/bwt, unchanged
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 3, 40)
    images = rng.random((40, 4))
    ds = Dataset(images, labels, 3, "test")
    task = Task(TaskSpec(1, "permuted", "fixture", 1), ds, ds)
    model = nn.init_model([4, 3], seed=7)
    base = task_accuracy(model, task)
    assert 0.0 < base < 1.0  # imperfect model, so the check is not vacuous

    perm = np.array([2, 0, 1])
    relabeled = Dataset(images, perm[labels], 3, "test")
    rel_task = Task(TaskSpec(1, "permuted", "fixture", 1), relabeled, relabeled)
    rel_model = nn.init_model([4, 3], seed=7)
    inv = np.argsort(perm)
    rel_model.heads[0].weight[...] = model.heads[0].weight[inv]
    rel_model.heads[0].bias[...] = model.heads[0].bias[inv]
    assert task_accuracy(rel_model, rel_task) == base


def test_extension_row_preserves_sign_structure():
    m = matrix_from(
        [[0.9, None, None], [0.7, 0.8, None], [0.6, 0.7, 0.9]],
        reference=[0.95, 0.85, 0.9],
    )
    extended = matrix_from(
        [
            [0.9, None, None, None],
            [0.7, 0.8, None, None],
            [0.6, 0.7, 0.9, None],
            [0.6, 0.7, 0.9, 0.88],
        ],
        reference=[0.95, 0.85, 0.9, 0.88],
    )
    assert np.sign(bwt(extended)) == np.sign(bwt(m))
    # the new diagonal term P[4][4] - m[4] is zero, so FWT scales by 2/3
    assert fwt(extended) == pytest.approx(fwt(m) * 2 / 3, rel=1e-12)


def test_summarize_handles_single_task():
    m = matrix_from([[0.9]])
    s = summarize(m)
    assert s["ACC"] == pytest.approx(0.9)
    assert s["BWT"] is None and s["SMT"] is None and s["FWT"] is None
    assert s["acc_after_task"] == [pytest.approx(0.9)]


# --- results files ---------------------------------------------------------------


def test_results_roundtrip(tmp_path):
    m = matrix_from([[0.9, None], [0.8, 0.95]], reference=[0.92, 0.96])
    metrics = summarize(m)
    json_path, csv_path = save_results(
        str(tmp_path), "spp", m, metrics, "abc123", {"init": 1, "data": 2, "dropout": 3}
    )
    doc = load_results(json_path)
    assert doc["strategy"] == "spp"
    assert doc["P"][0][1] is None
    assert doc["P"][1][0] == 0.8
    assert doc["reference_source"] == "joint"
    assert doc["metrics"]["ACC"] == metrics["ACC"]
    with open(csv_path) as f:
        lines = f.read().strip().splitlines()
    assert lines[0] == "task_trained,task_evaluated,accuracy"
    assert len(lines) == 4  # header + 3 filled entries
