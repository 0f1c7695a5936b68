"""Datasets, class histograms, and synthetic blob generation.

A :class:`Dataset` is an immutable dense feature matrix plus integer class
labels. All partitioners, models, and the federated engine consume index
arrays into one shared dataset instead of copying examples around.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, ParameterError
from .rng import stream

PROB_ATOL = 1e-9


@dataclass(frozen=True)
class Dataset:
    """Dense examples: ``features`` is (n, d) float64, ``labels`` is (n,) int."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise ParameterError("features must be a non-empty 2-D matrix")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ParameterError("labels must align with feature rows")
        if self.num_classes < 1:
            raise ParameterError("num_classes must be positive")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ParameterError("labels must lie in [0, num_classes)")
        features.setflags(write=False)
        labels.setflags(write=False)

    @property
    def num_examples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClassDistribution:
    """Discrete distribution over class labels (non-negative, sums to 1)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.shape[0] < 1:
            raise ParameterError("probs must be a non-empty vector")
        if np.any(probs < 0):
            raise ParameterError("probabilities must be non-negative")
        total = probs.sum()
        if abs(total - 1.0) > PROB_ATOL:
            raise ParameterError(f"probabilities sum to {total!r}, expected 1")
        probs.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @staticmethod
    def uniform(num_classes: int) -> "ClassDistribution":
        if num_classes < 1:
            raise ParameterError("num_classes must be positive")
        return ClassDistribution(np.full(num_classes, 1.0 / num_classes))

    @staticmethod
    def from_counts(counts: np.ndarray) -> "ClassDistribution":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ParameterError("counts must have positive total")
        return ClassDistribution(counts / total)


def class_histogram(dataset: Dataset, subset: np.ndarray) -> ClassDistribution:
    """Empirical class distribution of the examples indexed by ``subset``."""
    indices = np.asarray(subset, dtype=np.int64)
    if indices.size == 0:
        raise ParameterError("cannot take the class histogram of an empty subset")
    if indices.min() < 0 or indices.max() >= dataset.num_examples:
        raise ParameterError("subset contains out-of-range indices")
    counts = np.bincount(dataset.labels[indices], minlength=dataset.num_classes)
    return ClassDistribution.from_counts(counts)


def take_subset(dataset: Dataset, indices: np.ndarray) -> Dataset:
    """New dataset holding the selected rows (same class space)."""
    rows = np.asarray(indices, dtype=np.int64)
    if rows.size == 0:
        raise ParameterError("cannot take an empty subset")
    if rows.min() < 0 or rows.max() >= dataset.num_examples:
        raise ParameterError("subset contains out-of-range indices")
    return Dataset(dataset.features[rows], dataset.labels[rows], dataset.num_classes)


def generate_blobs(
    num_classes: int,
    per_class: int,
    feature_dim: int,
    spread: float,
    seed: int,
) -> Dataset:
    """Class-balanced Gaussian blobs with seeded, replay-identical placement.

    Class means are drawn on a hypersphere of radius ``2 * spread * sqrt(d)``
    so classes stay roughly separable at any dimension; each class then gets
    ``per_class`` isotropic Gaussian samples of scale ``spread`` around its
    mean. Identical arguments produce bit-identical datasets.
    """
    if num_classes < 2:
        raise ParameterError("need at least 2 classes")
    if per_class < 1:
        raise ParameterError("per_class must be positive")
    if feature_dim < 2:
        raise ParameterError("feature_dim must be at least 2")
    if spread <= 0:
        raise ParameterError("spread must be positive")

    rng = stream(seed, "generate-blobs")
    radius = 2.0 * spread * np.sqrt(feature_dim)
    means = rng.standard_normal((num_classes, feature_dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    means = means / norms * radius

    features = np.empty((num_classes * per_class, feature_dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c in range(num_classes):
        block = slice(c * per_class, (c + 1) * per_class)
        features[block] = means[c] + spread * rng.standard_normal((per_class, feature_dim))
        labels[block] = c
    return Dataset(features, labels, num_classes)


def save_csv(dataset: Dataset, path) -> None:
    """Write ``f0..f{d-1},label`` rows; floats use round-trip precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(dataset.feature_dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([f"{v:.17g}" for v in row] + [str(int(label))])


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Load a dataset CSV written by :func:`save_csv`.

    ``num_classes`` defaults to ``max(label) + 1``; passing it explicitly
    turns labels at or above it into format errors.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        expected = [f"f{j}" for j in range(len(header) - 1)] + ["label"]
        if len(header) < 2 or header != expected:
            raise DataFormatError(f"{path}: line 1: bad header {header!r}")
        dim = len(header) - 1

        features: list[list[float]] = []
        labels: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise DataFormatError(f"{path}: line {line_no}: expected {dim + 1} columns, got {len(row)}")
            try:
                features.append([float(v) for v in row[:dim]])
            except ValueError:
                raise DataFormatError(f"{path}: line {line_no}: non-numeric feature") from None
            try:
                label = int(row[dim])
            except ValueError:
                raise DataFormatError(f"{path}: line {line_no}: non-integer label {row[dim]!r}") from None
            if label < 0:
                raise DataFormatError(f"{path}: line {line_no}: negative label {label}")
            if num_classes is not None and label >= num_classes:
                raise DataFormatError(f"{path}: line {line_no}: label {label} out of range [0, {num_classes})")
            labels.append(label)

    if not labels:
        raise DataFormatError(f"{path}: no data rows")
    resolved = num_classes if num_classes is not None else max(labels) + 1
    return Dataset(np.array(features), np.array(labels, dtype=np.int64), resolved)
