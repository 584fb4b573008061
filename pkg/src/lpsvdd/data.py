"""Dataset container, CSV ingestion, preprocessing and stratified splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str] | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float).ravel()
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D array, got shape {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise DataError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain non-finite values")
        if not np.all((y == 1) | (y == -1)):
            raise DataError("label must be +1 or -1")
        if self.feature_names is not None and len(self.feature_names) != x.shape[1]:
            raise DataError("feature_names length does not match feature count")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(int))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.labels == -1))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset(self.features[index], self.labels[index], self.feature_names)

    def positives(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == 1))

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.feature_names)


@dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        std = np.asarray(self.std, dtype=float).ravel()
        if mean.shape != std.shape:
            raise DataError("mean and std lengths differ")
        if not np.all(std > 0):
            raise DataError("std entries must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def identity(cls, d: int) -> "StandardizationParams":
        return cls(np.zeros(d), np.ones(d))


@dataclass(frozen=True)
class DataSplits:
    train: Dataset
    validation: Dataset
    test: Dataset
    seed: int
    train_index: np.ndarray
    validation_index: np.ndarray
    test_index: np.ndarray


def _parse_label(text: str) -> int:
    token = text.strip()
    if token in ("1", "+1", "1.0", "+1.0"):
        return 1
    if token in ("-1", "-1.0"):
        return -1
    raise DataError(f"label must be +1 or -1, got {token!r}")


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    header = [h.strip() for h in header]
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {i}: expected {len(header)} cells, found {len(row)}")
    return header, rows


def _label_index(header: list[str], label_column) -> int | None:
    if label_column is None:
        return None
    if isinstance(label_column, int):
        if not -len(header) <= label_column < len(header):
            raise DataError(f"label column index {label_column} out of range")
        return label_column % len(header)
    if label_column not in header:
        return None
    return header.index(label_column)


def _parse_features(header, rows, skip) -> tuple[list[str], np.ndarray]:
    cols = [j for j in range(len(header)) if j != skip]
    if not cols:
        raise DataError("no feature columns")
    x = np.empty((len(rows), len(cols)))
    for i, row in enumerate(rows):
        for k, j in enumerate(cols):
            try:
                v = float(row[j])
            except ValueError:
                raise DataError(
                    f"row {i + 1}, column {header[j]!r}: cannot parse {row[j]!r} as a number"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"row {i + 1}, column {header[j]!r}: non-finite value")
            x[i, k] = v
    return [header[j] for j in cols], x


def load_csv(path, label_column="label") -> Dataset:
    """Read a labelled dataset; every column except the label is a feature.

    Rows are numbered from 1 (the first line after the header) in error messages.
    """
    header, rows = _read_rows(path)
    if not rows:
        raise DataError(f"{path}: no data rows")
    li = _label_index(header, label_column)
    if li is None:
        raise DataError(f"{path}: label column {label_column!r} not found")
    names, x = _parse_features(header, rows, li)
    labels = []
    for i, row in enumerate(rows, start=1):
        try:
            labels.append(_parse_label(row[li]))
        except DataError as exc:
            raise DataError(f"row {i}: {exc}") from None
    return Dataset(x, np.array(labels), names)


def load_features(path, label_column="label") -> tuple[np.ndarray, np.ndarray | None]:
    """Read a feature matrix for scoring; the label column is optional.

    Returns the features and the labels (``None`` when the file has no label column).
    """
    header, rows = _read_rows(path)
    li = _label_index(header, label_column)
    _, x = _parse_features(header, rows, li)
    if li is None:
        return x.reshape(len(rows), -1), None
    labels = np.array([_parse_label(row[li]) for row in rows], dtype=int)
    return x, labels


def write_csv(path, dataset: Dataset) -> None:
    names = dataset.feature_names or [f"x{j + 1}" for j in range(dataset.d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "label"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def fit_standardizer(positives: Dataset) -> StandardizationParams:
    x = positives.features
    if x.shape[0] == 0:
        raise DataError("cannot fit a standardizer on an empty set")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return StandardizationParams(mean, std)


def standardize(x: np.ndarray, params: StandardizationParams) -> np.ndarray:
    """Centre and scale only (no row normalisation)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.d:
        raise DataError(f"expected {params.d} features, got {x.shape[1]}")
    return (x - params.mean) / params.std


def normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # all-zero rows stay zero
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def preprocess(x: np.ndarray, params: StandardizationParams) -> np.ndarray:
    return normalize_rows(standardize(x, params))


def apply_standardizer(x: Dataset, params: StandardizationParams) -> Dataset:
    return x.with_features(preprocess(x.features, params))


def _class_sizes(n: int, ratios) -> list[int]:
    sizes = [int(math.floor(n * r)) for r in ratios]
    remainder = n - sum(sizes)
    # largest fractional part first, ties to the earlier subset
    order = sorted(range(3), key=lambda k: (-(n * ratios[k] - sizes[k]), k))
    for k in order[:remainder]:
        sizes[k] += 1
    return sizes


def three_way_split(data: Dataset, ratios=(0.4, 0.3, 0.3), seed: int = 0) -> DataSplits:
    """Stratified random train/validation/test partition.

    Positives and negatives are shuffled and cut separately, so each subset keeps
    the class proportions up to rounding.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for label in (1, -1):
        idx = np.flatnonzero(data.labels == label)
        if idx.size == 0:
            continue
        sizes = _class_sizes(idx.size, ratios)
        if min(sizes) == 0:
            raise DataError(
                f"class {label:+d} has {idx.size} members, too few for a three-way split"
            )
        idx = rng.permutation(idx)
        start = 0
        for k, size in enumerate(sizes):
            parts[k].append(idx[start:start + size])
            start += size
    index = [np.sort(np.concatenate(p)) for p in parts]
    return DataSplits(
        train=data.subset(index[0]),
        validation=data.subset(index[1]),
        test=data.subset(index[2]),
        seed=seed,
        train_index=index[0],
        validation_index=index[1],
        test_index=index[2],
    )
