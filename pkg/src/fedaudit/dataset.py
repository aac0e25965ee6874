"""Tabular dataset ingestion, preprocessing and per-agent partitioning.

Features are always dense float64 matrices scaled to [0, 1]; labels are 0/1
integer vectors.  Categorical columns become ``name=value`` indicator
columns, which lets :func:`synthesize_random` resample whole categories.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
LABEL = "binary-label"
KINDS = (CATEGORICAL, CONTINUOUS, LABEL)

MIN_SHARD_ROWS = 5


class DatasetError(ValueError):
    pass


@dataclass
class RawTable:
    columns: list[str]
    kinds: dict[str, str]
    rows: list[tuple]
    positive_label: object = None

    def __post_init__(self):
        missing = [c for c in self.columns if c not in self.kinds]
        if missing:
            raise DatasetError(f"no kind declared for columns {missing}")
        bad = {c: k for c, k in self.kinds.items() if k not in KINDS}
        if bad:
            raise DatasetError(f"unknown column kinds {bad}")
        labels = [c for c in self.columns if self.kinds[c] == LABEL]
        if len(labels) != 1:
            raise DatasetError(f"expected exactly one label column, got {labels}")
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise DatasetError(f"row {i} has {len(row)} fields, expected {width}")

    @property
    def label_column(self) -> str:
        return next(c for c in self.columns if self.kinds[c] == LABEL)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        if y.ndim != 1 or len(y) != len(x):
            raise DatasetError("labels must be a vector with one entry per row")
        if not np.all(np.isfinite(x)):
            raise DatasetError("non-finite feature values")
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise DatasetError("feature values must lie in [0, 1]")
        if not np.all((y == 0) | (y == 1)):
            raise DatasetError("labels must be binary")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DatasetError("feature_names length does not match feature count")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)

    @staticmethod
    def concat(parts: Sequence[Dataset]) -> Dataset:
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].feature_names,
        )


@dataclass(frozen=True)
class Shard:
    train: Dataset
    validate: Dataset

    @property
    def d(self) -> int:
        """Records owned by the agent; sets the DP noise scale."""
        return len(self.train) + len(self.validate)

    def full(self) -> Dataset:
        return Dataset.concat([self.train, self.validate])


def _as_float(value, column):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DatasetError(f"continuous column {column!r} holds non-numeric value {value!r}")


def _label_mapping(values, positive):
    distinct = sorted(set(values), key=str)
    if len(distinct) > 2:
        raise DatasetError(f"label column has more than two values: {distinct[:5]}")
    if positive is None:
        numeric = {str(v).strip() for v in distinct}
        if numeric <= {"0", "1", "0.0", "1.0", "True", "False"}:
            return lambda v: int(str(v).strip() in ("1", "1.0", "True"))
        positive = distinct[-1]
    return lambda v: int(v == positive)


def preprocess(raw: RawTable) -> Dataset:
    """One-hot encode categoricals and min-max scale continuous columns.

    Scaling is global over the whole table (test rows included).  A constant
    continuous column maps to all zeros.
    """
    if not raw.rows:
        raise DatasetError("empty table")
    blocks, names = [], []
    label_col = raw.label_column
    for j, col in enumerate(raw.columns):
        kind = raw.kinds[col]
        values = [row[j] for row in raw.rows]
        if kind == CONTINUOUS:
            v = np.array([_as_float(x, col) for x in values])
            if not np.all(np.isfinite(v)):
                raise DatasetError(f"non-finite value in column {col!r}")
            lo, hi = v.min(), v.max()
            scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
            blocks.append(scaled[:, None])
            names.append(col)
        elif kind == CATEGORICAL:
            if any(isinstance(x, float) for x in values) and any(isinstance(x, str) for x in values):
                raise DatasetError(f"column {col!r} mixes numeric and text values")
            cats = sorted(set(values), key=str)
            index = {c: i for i, c in enumerate(cats)}
            onehot = np.zeros((len(values), len(cats)))
            onehot[np.arange(len(values)), [index[x] for x in values]] = 1.0
            blocks.append(onehot)
            names.extend(f"{col}={c}" for c in cats)
    to_label = _label_mapping([row[raw.columns.index(label_col)] for row in raw.rows],
                              raw.positive_label)
    labels = np.array([to_label(row[raw.columns.index(label_col)]) for row in raw.rows])
    features = np.hstack(blocks) if blocks else np.zeros((len(raw.rows), 0))
    return Dataset(features, labels, tuple(names))


def split_shard(ds: Dataset) -> Shard:
    n_val = len(ds) // 5
    return Shard(train=ds.take(np.arange(n_val, len(ds))), validate=ds.take(np.arange(n_val)))


def _shuffled_split(ds: Dataset, seed):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_test = len(ds) // 3
    return order[n_test:], ds.take(order[:n_test])


def partition(ds: Dataset, n_agents: int, seed) -> tuple[list[Shard], Dataset]:
    """Reserve a third of the rows for testing and deal the rest out evenly."""
    if n_agents < 1:
        raise DatasetError("n_agents must be >= 1")
    pool, test = _shuffled_split(ds, seed)
    if len(pool) < MIN_SHARD_ROWS * n_agents:
        raise DatasetError(f"{len(pool)} non-test rows cannot give {n_agents} shards "
                           f"of at least {MIN_SHARD_ROWS} rows")
    shards = [split_shard(ds.take(part)) for part in np.array_split(pool, n_agents)]
    return shards, test


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    quotas = total * w / w.sum()
    counts = np.floor(quotas).astype(np.int64)
    short = total - int(counts.sum())
    # stable sort: ties go to the lower index
    for i in np.argsort(-(quotas - counts), kind="stable")[:short]:
        counts[i] += 1
    return counts.tolist()


def weighted_partition(ds: Dataset, relative_sizes: Sequence[float], seed) -> tuple[list[Shard], Dataset]:
    if len(relative_sizes) == 0:
        raise DatasetError("relative_sizes is empty")
    if any(not (s > 0 and math.isfinite(s)) for s in relative_sizes):
        raise DatasetError("relative sizes must be positive and finite")
    pool, test = _shuffled_split(ds, seed)
    counts = largest_remainder(len(pool), relative_sizes)
    if min(counts) < MIN_SHARD_ROWS:
        raise DatasetError(f"smallest shard would have {min(counts)} rows (< {MIN_SHARD_ROWS})")
    bounds = np.cumsum([0] + counts)
    shards = [split_shard(ds.take(pool[a:b])) for a, b in zip(bounds[:-1], bounds[1:])]
    return shards, test


def invert_labels(shard: Shard) -> Shard:
    def flip(part: Dataset) -> Dataset:
        return Dataset(part.features, 1 - part.labels, part.feature_names)
    return Shard(train=flip(shard.train), validate=flip(shard.validate))


def _column_groups(names: Sequence[str]) -> list[list[int]]:
    groups: dict[str, list[int]] = {}
    for j, name in enumerate(names):
        key = name.split("=", 1)[0] if "=" in name else f"\0{j}"
        groups.setdefault(key, []).append(j)
    return list(groups.values())


def synthesize_random(reference: Dataset, n_rows: int, seed) -> Dataset:
    """Sample every feature independently from its empirical marginal.

    One-hot blocks sharing a ``name=`` prefix are drawn as a unit so each
    synthesized row still holds exactly one category per original column.
    Labels are drawn from the label marginal, independent of the features.
    """
    if n_rows <= 0:
        raise DatasetError("n_rows must be positive")
    if len(reference) == 0:
        raise DatasetError("reference dataset is empty")
    rng = np.random.default_rng(seed)
    n_ref = len(reference)
    out = np.empty((n_rows, reference.n_features))
    for cols in _column_groups(reference.feature_names):
        rows = rng.integers(0, n_ref, size=n_rows)
        out[:, cols] = reference.features[np.ix_(rows, cols)]
    labels = reference.labels[rng.integers(0, n_ref, size=n_rows)]
    return Dataset(out, labels, reference.feature_names)


def make_synthetic(n_rows: int, seed, n_continuous: int = 16, n_categorical: int = 3,
                   shift: float = 0.2, spread: float = 0.2, prevalence: float = 0.5,
                   label_noise: float = 0.05) -> Dataset:
    """Two-class, Gaussian-ish tabular data that needs no download.

    Each class draws continuous features from a clipped normal whose mean
    moves by ``shift`` toward 0 or 1; half the features point each way, so
    the class boundary runs through the centre of the cube.  Categorical
    columns (one-hot, four levels) have class-dependent level frequencies.
    A ``label_noise`` fraction of labels is flipped afterwards.
    """
    if n_rows < 1:
        raise DatasetError("n_rows must be positive")
    rng = np.random.default_rng(seed)
    y = (rng.random(n_rows) < prevalence).astype(np.int64)
    direction = np.where(np.arange(n_continuous) % 2 == 0, 1.0, -1.0)
    centre = 0.5 + shift * np.outer(2 * y - 1, direction)
    blocks = [np.clip(centre + rng.normal(0.0, spread, (n_rows, n_continuous)), 0.0, 1.0)]
    names = [f"c{j}" for j in range(n_continuous)]
    freq = np.array([0.4, 0.3, 0.2, 0.1])
    for j in range(n_categorical):
        p_neg, p_pos = (freq, freq[::-1]) if j % 2 == 0 else (freq[::-1], freq)
        u = rng.random(n_rows)
        cat = np.where(y == 1, np.searchsorted(np.cumsum(p_pos), u), np.searchsorted(np.cumsum(p_neg), u))
        blocks.append(np.eye(4)[np.minimum(cat, 3)])
        names.extend(f"k{j}={c}" for c in range(4))
    flip = rng.random(n_rows) < label_noise
    y[flip] = 1 - y[flip]
    return Dataset(np.hstack(blocks), y, tuple(names))


ADULT_COLUMNS = [
    ("age", CONTINUOUS), ("workclass", CATEGORICAL), ("fnlwgt", CONTINUOUS),
    ("education", CATEGORICAL), ("education-num", CONTINUOUS),
    ("marital-status", CATEGORICAL), ("occupation", CATEGORICAL),
    ("relationship", CATEGORICAL), ("race", CATEGORICAL), ("sex", CATEGORICAL),
    ("capital-gain", CONTINUOUS), ("capital-loss", CONTINUOUS),
    ("hours-per-week", CONTINUOUS), ("native-country", CATEGORICAL),
    ("income", LABEL),
]


def read_csv(path, kinds: dict[str, str], header: bool = True, columns=None,
             missing: str = "?", positive_label=None) -> RawTable:
    """Read a comma-separated file, dropping any row with a missing field."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        lines = [r for r in reader if r and any(f.strip() for f in r)]
    if header:
        columns, lines = [c.strip() for c in lines[0]], lines[1:]
    if columns is None:
        raise DatasetError("column names required when the file has no header")
    rows = []
    for r in lines:
        fields = [f.strip().rstrip(".") if kinds.get(c) == LABEL else f.strip()
                  for c, f in zip(columns, r)]
        if missing in fields or len(fields) != len(columns):
            continue
        rows.append(tuple(_as_float(f, c) if kinds[c] == CONTINUOUS else f
                          for c, f in zip(columns, fields)))
    return RawTable(list(columns), dict(kinds), rows, positive_label)


def load_adult(path) -> RawTable:
    """Adult Census Income in its UCI layout (no header row)."""
    cols = [c for c, _ in ADULT_COLUMNS]
    return read_csv(path, dict(ADULT_COLUMNS), header=False, columns=cols, positive_label=">50K")


def write_csv(ds: Dataset, dest) -> None:
    """Write features and a ``label`` column to a path or an open text file."""
    if hasattr(dest, "write"):
        _write_rows(ds, dest)
        return
    with open(Path(dest), "w", newline="") as fh:
        _write_rows(ds, fh)


def _write_rows(ds: Dataset, fh) -> None:
    w = csv.writer(fh)
    w.writerow(list(ds.feature_names) + ["label"])
    for x, y in zip(ds.features, ds.labels):
        w.writerow([repr(float(v)) for v in x] + [int(y)])
