"""Desk-scale classification datasets and train/validation/test splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class CsvFormatError(ValueError):
    """Malformed CSV input; message names the offending row."""


class SplitError(ValueError):
    """Split fractions invalid or a subset received zero rows."""


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer labels in {0..class_count-1}."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError("labels must lie in {0..class_count-1}")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DataSplit:
    """Disjoint train/val/test parts sharing feature dim and class count."""

    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path, label_column: int = -1) -> LabeledDataset:
    """Load a comma-separated dataset; all non-label columns become features.

    A non-numeric first row is treated as a header. Labels are remapped to
    contiguous integers in order of first appearance.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    rows = [row for row in rows if row]
    if not rows:
        raise CsvFormatError(f"{path}: file is empty")
    start = 0
    if any(not _looks_numeric(cell) for cell in rows[0]):
        start = 1
        if len(rows) == 1:
            raise CsvFormatError(f"{path}: only a header row present")

    arity = len(rows[start])
    features = []
    raw_labels = []
    for idx in range(start, len(rows)):
        row = rows[idx]
        if len(row) != arity:
            raise CsvFormatError(f"{path}: row {idx + 1} has {len(row)} cells, expected {arity}")
        label_idx = label_column if label_column >= 0 else arity + label_column
        try:
            label = int(float(row[label_idx]))
        except ValueError:
            raise CsvFormatError(f"{path}: row {idx + 1}: label {row[label_idx]!r} is not an integer")
        feats = []
        for col, cell in enumerate(row):
            if col == label_idx:
                continue
            try:
                feats.append(float(cell))
            except ValueError:
                raise CsvFormatError(f"{path}: row {idx + 1}: feature cell {cell!r} is not numeric")
        features.append(feats)
        raw_labels.append(label)

    remap: dict[int, int] = {}
    labels = []
    for label in raw_labels:
        if label not in remap:
            remap[label] = len(remap)
        labels.append(remap[label])
    return LabeledDataset(
        features=np.asarray(features, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        class_count=len(remap),
    )


def synth_blobs(
    classes: int, per_class: int, dim: int, spread: float, rng: np.random.Generator
) -> LabeledDataset:
    """Gaussian blobs around class centers on a scaled axis simplex.

    Center of class k is the k-th unit vector, so ``dim >= classes`` is
    required; ``spread`` is the isotropic standard deviation.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("need at least 1 point per class")
    if spread <= 0:
        raise ValueError("spread must be positive")
    if dim < classes:
        raise ValueError(f"dim {dim} must be >= classes {classes} for simplex centers")
    centers = np.eye(classes, dim)
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(0.0, spread, size=(classes * per_class, dim))
    features = centers[labels] + noise
    return LabeledDataset(features=features, labels=labels.astype(np.int64), class_count=classes)


def _allocate(n: int, fractions: tuple[float, float, float]) -> list[int]:
    # largest-remainder rounding so the part sizes always sum to n
    raw = [f * n for f in fractions]
    counts = [int(x) for x in raw]
    order = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(n - sum(counts)):
        counts[order[i % 3]] += 1
    return counts


def split(
    data: LabeledDataset,
    fractions: tuple[float, float, float],
    rng: np.random.Generator,
) -> DataSplit:
    """Stratified train/val/test split; deterministic for a given generator."""
    if any(f <= 0 for f in fractions):
        raise SplitError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {fractions}")

    parts: list[list[int]] = [[], [], []]
    for cls in range(data.class_count):
        idx = np.flatnonzero(data.labels == cls)
        idx = idx[rng.permutation(len(idx))]
        counts = _allocate(len(idx), fractions)
        offset = 0
        for part in range(3):
            parts[part].extend(idx[offset : offset + counts[part]].tolist())
            offset += counts[part]

    subsets = []
    for name, indices in zip(("train", "val", "test"), parts):
        if not indices:
            raise SplitError(f"{name} subset received zero rows")
        sel = np.asarray(sorted(indices), dtype=np.int64)
        subsets.append(
            LabeledDataset(
                features=data.features[sel],
                labels=data.labels[sel],
                class_count=data.class_count,
            )
        )
    return DataSplit(train=subsets[0], val=subsets[1], test=subsets[2])


def standardize(parts: DataSplit) -> DataSplit:
    """Scale all parts to zero mean / unit variance using train statistics.

    Constant columns are centered only, to avoid dividing by zero.
    """
    mean = parts.train.features.mean(axis=0)
    std = parts.train.features.std(axis=0)
    scale = np.where(std > 0, std, 1.0)

    def apply(d: LabeledDataset) -> LabeledDataset:
        return LabeledDataset(
            features=(d.features - mean) / scale,
            labels=d.labels,
            class_count=d.class_count,
        )

    return DataSplit(train=apply(parts.train), val=apply(parts.val), test=apply(parts.test))
