"""Dataset ingestion, fold splitting and bootstrap resampling.

Labels are always stored as int8 values in {-1, +1}.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised when input data cannot be turned into a valid Dataset."""


class MissingValueError(DataError):
    pass


class LabelCardinalityError(DataError):
    pass


class ParseError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary classification sample.

    Parameters
    ----------
    features : array of shape (n_instances, n_features)
    labels : array of shape (n_instances,) with values in {-1, +1}
    name : str
    """

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError(
                f"labels shape {y.shape} does not match {X.shape[0]} instances")
        if not np.all((y == 1) | (y == -1)):
            raise DataError("labels must be -1 or +1")
        if not np.all(np.isfinite(X)):
            raise MissingValueError("features contain NaN or infinite values")
        X.setflags(write=False)
        y = y.astype(np.int8)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n_instances

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx], name or self.name)

    def class_counts(self) -> tuple[int, int]:
        """Return ``(n_negative, n_positive)``."""
        n_pos = int(np.count_nonzero(self.labels == 1))
        return self.n_instances - n_pos, n_pos


def load_csv(path, label_column: str | int = -1, positive_label: str | None = None,
             name: str | None = None) -> Dataset:
    """Read a headed CSV file into a Dataset.

    ``label_column`` is a header name or a column index (negative indices
    count from the end). Rows whose label equals ``positive_label`` become
    +1 and the other label value becomes -1. When ``positive_label`` is
    omitted, the lexicographically larger label value is positive.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    n_cols = len(header)

    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
        if not -n_cols <= label_idx < n_cols:
            raise DataError(f"{path}: label column index {label_idx} out of range")
        label_idx %= n_cols

    feature_cols = [j for j in range(n_cols) if j != label_idx]
    X = np.empty((len(body), len(feature_cols)))
    raw_labels = []
    for i, row in enumerate(body):
        line = i + 2  # 1-based, header is line 1
        if len(row) != n_cols:
            raise DataError(f"{path}: line {line} has {len(row)} cells, expected {n_cols}")
        for k, j in enumerate(feature_cols):
            cell = row[j].strip()
            if cell == "":
                raise MissingValueError(
                    f"{path}: missing value at line {line}, column {header[j]!r}")
            try:
                X[i, k] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric value {cell!r} at line {line}, "
                    f"column {header[j]!r}") from None
        label = row[label_idx].strip()
        if label == "":
            raise MissingValueError(
                f"{path}: missing label at line {line}, column {header[label_idx]!r}")
        raw_labels.append(label)

    values = sorted(set(raw_labels))
    if len(values) != 2:
        raise LabelCardinalityError(
            f"{path}: label column {header[label_idx]!r} has {len(values)} "
            f"distinct values {values[:5]}, expected exactly 2")
    if positive_label is None:
        positive_label = values[1]
    elif positive_label not in values:
        raise LabelCardinalityError(
            f"{path}: positive label {positive_label!r} not among {values}")
    y = np.array([1 if v == positive_label else -1 for v in raw_labels], dtype=np.int8)
    if len(y) < 2:
        raise DataError(f"{path}: need at least 2 instances, got {len(y)}")
    return Dataset(X, y, name or path.stem)


def save_csv(d: Dataset, path, label_name: str = "label") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(d.n_features)] + [label_name])
        for x, y in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def split_kfold(d: Dataset, k: int, seed: int) -> FoldPlan:
    """Stratified k-fold assignment.

    Instances are shuffled within each class, the classes are laid out one
    after the other, and position ``p`` goes to fold ``p % k``. Fold sizes
    therefore differ by at most one, and so do per-class counts per fold.
    """
    n = d.n_instances
    if not 2 <= k <= n:
        raise DataError(f"k must satisfy 2 <= k <= n_instances={n}, got k={k}")
    rng = np.random.default_rng(seed)
    order = []
    for label in (-1, 1):
        idx = np.flatnonzero(d.labels == label)
        order.append(rng.permutation(idx))
    order = np.concatenate(order)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    assignments.setflags(write=False)
    return FoldPlan(k, assignments, seed)


def bootstrap_sample(d: Dataset | int, seed) -> np.ndarray:
    """Indices of a bootstrap resample (uniform, with replacement)."""
    n = d if isinstance(d, (int, np.integer)) else d.n_instances
    if n < 1:
        raise DataError("cannot bootstrap an empty dataset")
    return np.random.default_rng(seed).integers(0, n, size=n)


def two_gaussians(n: int = 200, separation: float = 2.0, seed: int = 0,
                  n_features: int = 2, name: str = "two_gaussians") -> Dataset:
    """Balanced two-class Gaussian problem.

    Class means sit at ``-separation/2`` and ``+separation/2`` along every
    axis with unit isotropic covariance, so smaller separation means more
    overlap.
    """
    rng = np.random.default_rng(seed)
    n_pos = n // 2
    y = np.concatenate([np.ones(n_pos), -np.ones(n - n_pos)]).astype(np.int8)
    X = rng.standard_normal((n, n_features)) + (separation / 2.0) * y[:, None]
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], name)


_BUNDLED_DIR = Path(__file__).with_name("datasets")


def bundled_names() -> list[str]:
    return sorted(p.stem for p in _BUNDLED_DIR.glob("*.csv"))


def load_bundled(name: str) -> Dataset:
    """Load one of the small benchmark datasets shipped with the package."""
    path = _BUNDLED_DIR / f"{name}.csv"
    if not path.exists():
        raise DataError(f"unknown bundled dataset {name!r}; have {bundled_names()}")
    return load_csv(path, label_column="label", positive_label="1", name=name)


def resolve_dataset(spec: str) -> Dataset:
    """Turn a CLI dataset argument into a Dataset.

    Accepted forms: a CSV path (label in the last column), ``bundled:NAME``,
    and ``synthetic:two_gaussians[:n[:separation[:seed]]]``.
    """
    if spec.startswith("bundled:"):
        return load_bundled(spec.split(":", 1)[1])
    if spec.startswith("synthetic:"):
        parts = spec.split(":")[1:]
        if parts[0] != "two_gaussians":
            raise DataError(f"unknown synthetic generator {parts[0]!r}")
        n = int(parts[1]) if len(parts) > 1 else 200
        sep = float(parts[2]) if len(parts) > 2 else 2.0
        seed = int(parts[3]) if len(parts) > 3 else 0
        return two_gaussians(n, sep, seed, name=f"two_gaussians_n{n}_s{seed}")
    path = Path(spec)
    if not path.exists():
        raise DataError(f"data file not found: {spec}")
    return load_csv(path)


__all__: Sequence[str] = [
    "DataError", "MissingValueError", "LabelCardinalityError", "ParseError",
    "Dataset", "FoldPlan", "load_csv", "save_csv", "split_kfold",
    "bootstrap_sample", "two_gaussians", "bundled_names", "load_bundled",
    "resolve_dataset",
]
