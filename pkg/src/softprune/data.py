"""IDX ingestion and split/permuted task-sequence construction.

Images are flat float64 rows in [0, 1]; task sequences are deterministic
functions of their seeds.  A synthetic 784-d Gaussian-blob generator stands
in for MNIST in environments without the IDX files.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError, FormatError
from .rng import SYNTH, derive_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray  # (n, d) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_count: int
    split: str  # "train" | "test"

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class TaskSpec:
    task_id: int  # 1-based position in the sequence
    kind: str  # "split" | "permuted"
    source: str
    head_id: int
    class_subset: list[int] | None = None  # split: remapped label i <-> class_subset[i]
    permutation_seed: int | None = None  # permuted: None means identity
    train_size: int = 0
    test_size: int = 0


@dataclass
class Task:
    spec: TaskSpec
    train: Dataset
    test: Dataset


def _open_maybe_gz(path: str):
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_exact(f, n: int, path: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(
            f"{path}: truncated, needed {n} bytes at byte offset {f.tell() - len(data)}"
        )
    return data


def _read_be32(f, path: str) -> int:
    return struct.unpack(">i", _read_exact(f, 4, path))[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse a big-endian IDX image/label pair, scaling pixels by 1/255."""
    with _open_maybe_gz(images_path) as f:
        magic = _read_be32(f, images_path)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: bad magic 0x{magic:08x} at byte offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        count = _read_be32(f, images_path)
        rows = _read_be32(f, images_path)
        cols = _read_be32(f, images_path)
        raw = _read_exact(f, count * rows * cols, images_path)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    images = images.astype(np.float64) / 255.0

    with _open_maybe_gz(labels_path) as f:
        magic = _read_be32(f, labels_path)
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{labels_path}: bad magic 0x{magic:08x} at byte offset 0, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        label_count = _read_be32(f, labels_path)
        raw = _read_exact(f, label_count, labels_path)
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if label_count != count:
        raise FormatError(
            f"{labels_path}: {label_count} labels for {count} images in {images_path}"
        )
    return Dataset(images, labels, int(labels.max()) + 1 if count else 0, "train")


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str, labels_path: str) -> None:
    """Write a float [0,1] image matrix and labels as an IDX pair (28x28 rows)."""
    n, d = images.shape
    side = int(round(d**0.5))
    if side * side != d:
        raise ConfigurationError(f"image width {d} is not a square pixel count")
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, side, side))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABELS_MAGIC, n))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_mnist_dir(directory: str, split: str) -> Dataset:
    """Load the standard MNIST file pair (optionally .gz) from a directory."""
    img_name, lbl_name = MNIST_FILES[split]
    paths = []
    for name in (img_name, lbl_name):
        for candidate in (name, name + ".gz"):
            p = os.path.join(directory, candidate)
            if os.path.exists(p):
                paths.append(p)
                break
        else:
            raise FormatError(f"missing {name}[.gz] in {directory}")
    ds = load_idx(paths[0], paths[1])
    ds.split = split
    return ds


def _take_rows(ds: Dataset, idx: np.ndarray, labels: np.ndarray | None = None) -> Dataset:
    return Dataset(
        ds.images[idx],
        ds.labels[idx] if labels is None else labels,
        ds.class_count,
        ds.split,
    )


def make_split_tasks(
    train: Dataset,
    test: Dataset,
    subsets: list[list[int]],
    source: str = "dataset",
) -> list[Task]:
    """One task per class subset, labels remapped to 0..len(subset)-1.

    The remapping table is the subset itself: remapped label i corresponds to
    global class ``subset[i]``.
    """
    if not subsets or any(len(s) == 0 for s in subsets):
        raise ConfigurationError("class subsets must be nonempty")
    flat = [c for s in subsets for c in s]
    if len(set(flat)) != len(flat):
        raise ConfigurationError(f"class subsets overlap: {subsets}")

    tasks = []
    for t, subset in enumerate(subsets, start=1):
        remap = {c: i for i, c in enumerate(subset)}
        parts = []
        for ds in (train, test):
            mask = np.isin(ds.labels, subset)
            idx = np.flatnonzero(mask)
            remapped = np.array([remap[c] for c in ds.labels[idx]], dtype=np.int64)
            part = _take_rows(ds, idx, remapped)
            part.class_count = len(subset)
            parts.append(part)
        spec = TaskSpec(
            task_id=t,
            kind="split",
            source=source,
            head_id=t,
            class_subset=list(subset),
            train_size=len(parts[0]),
            test_size=len(parts[1]),
        )
        tasks.append(Task(spec, parts[0], parts[1]))
    return tasks


def make_permuted_task(
    train: Dataset,
    test: Dataset,
    permutation_seed: int | None,
    task_id: int,
    source: str = "dataset",
) -> Task:
    """Apply one fixed pixel permutation to train and test images.

    ``permutation_seed=None`` is the reserved identity convention.
    """
    if permutation_seed is None:
        perm = np.arange(train.images.shape[1])
    else:
        perm = np.random.default_rng(permutation_seed).permutation(train.images.shape[1])
    parts = [
        Dataset(ds.images[:, perm], ds.labels.copy(), ds.class_count, ds.split)
        for ds in (train, test)
    ]
    spec = TaskSpec(
        task_id=task_id,
        kind="permuted",
        source=source,
        head_id=task_id,
        permutation_seed=permutation_seed,
        train_size=len(parts[0]),
        test_size=len(parts[1]),
    )
    return Task(spec, parts[0], parts[1])


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Deterministic sample without replacement, rows in ascending source order.

    Stratified by class with proportional quotas (largest-remainder rounding),
    uniform within each class.  Plain uniform draws cannot hold class
    proportions within the documented tolerance, so quotas are exact.
    """
    if n > len(dataset):
        raise ConfigurationError(f"cannot subsample {n} rows from {len(dataset)}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(dataset.labels, return_counts=True)
    exact = n * counts / len(dataset)
    quotas = np.floor(exact).astype(int)
    remainder = exact - quotas
    short = n - quotas.sum()
    for c in np.argsort(-remainder, kind="stable")[:short]:
        quotas[c] += 1
    picks = []
    for cls, quota in zip(classes, quotas):
        rows = np.flatnonzero(dataset.labels == cls)
        picks.append(rng.choice(rows, size=quota, replace=False))
    idx = np.sort(np.concatenate(picks))
    return _take_rows(dataset, idx)


# Stroke sparsity, pair-confusability and background noise of the synthetic
# classes, calibrated so a converged desk-scale MLP behaves like it does on
# MNIST: per-task accuracy 97-99% (saturated tasks have near-zero output
# entropy, which collapses every entropy-based importance signal) and
# moderate cross-task interference (dense informative pixels make permuted
# tasks interfere far more than real MNIST; near-silent background pixels
# make them interfere far less).
SYNTH_STROKE_DENSITY = 0.25
SYNTH_PAIR_MIX = 0.6
SYNTH_BG_NOISE = 0.15


def synthetic_dataset(
    n: int,
    seed: int,
    class_count: int = 10,
    split: str = "train",
    image_side: int = 28,
    noise: float = 0.3,
) -> Dataset:
    """Gaussian class blobs in pixel space, the MNIST stand-in.

    Class means are sparse stroke-like patterns (thresholded smoothed noise);
    classes within a pair {2i, 2i+1} share part of their pattern so they are
    confusable.  Samples are the mean plus Gaussian pixel noise, clipped into
    [0, 1].  Train/test draws for one seed share the class means but use
    disjoint noise streams.
    """
    if n < class_count:
        raise ConfigurationError(f"need at least one row per class, got n={n}")
    d = image_side * image_side
    mean_rng = derive_rng(seed, SYNTH, 0)
    means = []
    for _ in range(class_count):
        field = gaussian_filter(mean_rng.random((image_side, image_side)), sigma=2.5).ravel()
        threshold = np.percentile(field, 100 * (1 - SYNTH_STROKE_DENSITY))
        means.append(np.clip((field - threshold) / max(field.max() - threshold, 1e-9), 0, 1) * 0.95)
    means = np.stack(means)
    for i in range(class_count // 2):
        a, b = 2 * i, 2 * i + 1
        means[b] = SYNTH_PAIR_MIX * means[a] + (1 - SYNTH_PAIR_MIX) * means[b]

    stream = {"train": 1, "test": 2}[split]
    rng = derive_rng(seed, SYNTH, stream)
    labels = np.arange(n, dtype=np.int64) % class_count
    rng.shuffle(labels)
    base = means[labels]
    stroke = base > 0.05
    jitter = rng.standard_normal((n, d))
    images = base + jitter * np.where(stroke, noise, SYNTH_BG_NOISE)
    np.clip(images, 0.0, 1.0, out=images)
    return Dataset(images, labels, class_count, split)
