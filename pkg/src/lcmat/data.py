"""Datasets, the LCD1 binary format, CSV ingestion and splitting."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng, as_rng

MAGIC = b"LCD1"
_HEADER = struct.Struct("<4sIII")


class DataError(ValueError):
    """Raised for malformed or inconsistent dataset inputs."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense features with integer labels in ``[0, class_count)``.

    Construction validates everything; a ``Dataset`` that exists is valid.
    Set ``require_all_classes=False`` for evaluation splits or reduced sets
    where a class may legitimately be empty.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "dataset"
    label_names: tuple | None = None
    require_all_classes: bool = field(default=True, repr=False)

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DataError("labels must be a vector with one entry per row")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        c = int(self.class_count)
        if c < 1:
            raise DataError("class_count must be positive")
        if y.size and (y.min() < 0 or y.max() >= c):
            bad = int(y[(y < 0) | (y >= c)][0])
            raise DataError(f"label {bad} outside [0, {c})")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain non-finite values")
        if self.require_all_classes:
            missing = np.setdiff1d(np.arange(c), y)
            if missing.size:
                raise DataError(f"class {int(missing[0])} has no examples")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_count", c)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def class_indices(self, y: int) -> np.ndarray:
        return np.flatnonzero(self.labels == y)

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.class_count,
            name or f"{self.name}[subset]",
            self.label_names,
            require_all_classes=False,
        )

    def with_features(self, features, name: str | None = None) -> "Dataset":
        return Dataset(
            features,
            self.labels,
            self.class_count,
            name or self.name,
            self.label_names,
            require_all_classes=self.require_all_classes,
        )


def class_indices(ds: Dataset, y: int) -> np.ndarray:
    """Strictly increasing row indices whose label is ``y``."""
    return ds.class_indices(y)


# -- LCD1 binary -------------------------------------------------------------

def save_binary(ds: Dataset, path) -> None:
    """Write ``ds`` as LCD1: header, float32 features, u32 labels (little-endian)."""
    header = _HEADER.pack(MAGIC, ds.n, ds.d, ds.class_count)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ds.features.astype("<f4").tobytes(order="C"))
        fh.write(ds.labels.astype("<u4").tobytes())


def load_binary(path, name: str | None = None) -> Dataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n, d, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 4 * n * d + 4 * n
    if len(raw) < expected:
        raise DataError(f"{path}: truncated payload ({len(raw)} of {expected} bytes)")
    if len(raw) > expected:
        raise DataError(f"{path}: {len(raw) - expected} trailing bytes")
    off = _HEADER.size
    x = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    y = np.frombuffer(raw, dtype="<u4", count=n, offset=off + 4 * n * d)
    if n and int(y.max()) >= c:
        raise DataError(f"{path}: label {int(y.max())} out of range for {c} classes")
    return Dataset(x.astype(np.float64), y.astype(np.int64), c, name or path.stem,
                   require_all_classes=False)


# -- CSV ---------------------------------------------------------------------

def save_csv(ds: Dataset, path, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{j}" for j in range(ds.d)] + ["label"])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def load_csv(path, label_column=-1, header: bool = True, name: str | None = None) -> Dataset:
    """Read a rectangular numeric CSV with one label column.

    Labels are remapped to dense ``0..c-1`` in sorted order of their
    original values (numeric order when all labels parse as numbers);
    the original values are kept in ``label_names``.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    names = None
    if header:
        names, rows = rows[0], rows[1:]
        if not rows:
            raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    if isinstance(label_column, str):
        if names is None or label_column not in names:
            raise DataError(f"{path}: no column named {label_column!r}")
        label_column = names.index(label_column)
    if not -width <= label_column < width:
        raise DataError(f"{path}: label column {label_column} out of range")
    label_column %= width

    feats, raw_labels = [], []
    first_line = 2 if header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {r + first_line} has {len(row)} cells, expected {width}")
        vals = []
        for col, cell in enumerate(row):
            if col == label_column:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {cell!r} at row {r + first_line}, column {col + 1}"
                ) from None
        feats.append(vals)
        raw_labels.append(row[label_column].strip())

    try:
        keyed = {lab: float(lab) for lab in set(raw_labels)}
        ordered = sorted(keyed, key=keyed.__getitem__)
    except ValueError:
        ordered = sorted(set(raw_labels))
    mapping = {lab: k for k, lab in enumerate(ordered)}
    y = np.array([mapping[lab] for lab in raw_labels], dtype=np.int64)
    x = np.array(feats, dtype=np.float64).reshape(len(rows), width - 1)
    return Dataset(x, y, len(ordered), name or path.stem, tuple(ordered))


# -- splitting and synthesis -------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise DataError("test_fraction must lie in (0, 1)")


def stratified_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Split into (train, test).

    Stratified mode takes ``round(size * test_fraction)`` test rows from
    each class, clipped so both sides keep at least one example.
    """
    rng = Rng(spec.seed)
    if spec.stratified:
        test_parts = []
        for y in range(ds.class_count):
            rows = ds.class_indices(y)
            if rows.size == 0:
                continue
            if rows.size < 2:
                raise DataError(f"class {y} has a single example; cannot stratify")
            k = int(np.floor(rows.size * spec.test_fraction + 0.5))
            k = min(max(k, 1), rows.size - 1)
            test_parts.append(rows[rng.permutation(rows.size)[:k]])
        test_idx = np.sort(np.concatenate(test_parts))
    else:
        k = int(np.floor(ds.n * spec.test_fraction + 0.5))
        test_idx = np.sort(rng.permutation(ds.n)[:k])
    mask = np.ones(ds.n, dtype=bool)
    mask[test_idx] = False
    train_idx = np.flatnonzero(mask)
    train = Dataset(ds.features[train_idx], ds.labels[train_idx], ds.class_count,
                    f"{ds.name}-train", ds.label_names, require_all_classes=False)
    test = Dataset(ds.features[test_idx], ds.labels[test_idx], ds.class_count,
                   f"{ds.name}-test", ds.label_names, require_all_classes=False)
    return train, test


def split_indices(ds: Dataset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Index form of :func:`stratified_split` (same draws, same result)."""
    tagged = ds.with_features(np.column_stack([np.arange(ds.n, dtype=np.float64), ds.features]))
    tr, te = stratified_split(tagged, spec)
    return tr.features[:, 0].astype(np.int64), te.features[:, 0].astype(np.int64)


def synth_gaussian_mixture(rng, classes: int, per_class: int, dim: int,
                           separation: float, name: str = "gmm") -> Dataset:
    """Isotropic unit-variance Gaussian blobs around ``separation * u_y``.

    ``u_y`` are independent random unit directions. Rows are grouped by
    class (all of class 0 first).
    """
    if classes < 2:
        raise DataError("need at least two classes")
    if per_class < 1 or dim < 1:
        raise DataError("per_class and dim must be positive")
    rng = as_rng(rng)
    dirs = rng.normal((classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = separation * dirs
    noise = rng.normal((classes * per_class, dim))
    labels = np.repeat(np.arange(classes), per_class)
    return Dataset(means[labels] + noise, labels, classes, name)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> "Standardizer":
        mu = ds.features.mean(axis=0)
        sd = ds.features.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return cls(mu, sd)

    def transform(self, ds: Dataset) -> Dataset:
        return ds.with_features((ds.features - self.mean) / self.scale)


def standardize(train: Dataset, *others: Dataset):
    """Standardize with statistics from ``train`` only; returns all datasets."""
    st = Standardizer.fit(train)
    out = [st.transform(train)] + [st.transform(o) for o in others]
    return out[0] if not others else tuple(out)
