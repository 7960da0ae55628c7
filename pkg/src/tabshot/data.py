"""Loading and preprocessing of small labeled tables.

A :class:`Dataset` moves through ``load_csv -> encode_labels -> impute ->
normalize`` and ends up as a float matrix in ``[0, 1]`` that the image
transform can consume.  Every step returns a new ``Dataset``; nothing is
modified in place.
"""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import (
    DataFormatError,
    EmptyDatasetError,
    StratificationError,
    UnknownCategoryError,
    UnusableFeatureError,
)

DEFAULT_MISSING_MARKERS = ("", "NA", "?")


class FeatureKind(str, enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: FeatureKind = FeatureKind.NUMERIC
    categories: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        object.__setattr__(self, "categories", tuple(self.categories))
        if (self.kind is FeatureKind.CATEGORICAL) != bool(self.categories):
            raise ValueError(
                f"feature {self.name!r}: categories must be non-empty "
                "exactly when the feature is categorical"
            )
        if len(set(self.categories)) != len(self.categories):
            raise ValueError(f"feature {self.name!r}: duplicate categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind is FeatureKind.CATEGORICAL


@dataclass(frozen=True)
class Dataset:
    """Rows x features table with integer class labels.

    ``values`` is an object array while categorical cells still hold their
    raw strings, and a float64 array once :func:`encode_labels` has run.
    Missing cells are ``None`` (raw categorical) or ``nan``.
    """

    features: tuple
    values: np.ndarray
    labels: np.ndarray
    class_names: tuple
    norm_stats: Optional[tuple] = None
    row_ids: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] != len(self.features):
            raise DataFormatError(
                f"values must have {len(self.features)} columns, got shape {values.shape}"
            )
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (values.shape[0],):
            raise DataFormatError("one label per row required")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise DataFormatError("label id outside [0, n_classes)")
        row_ids = self.row_ids
        row_ids = np.arange(values.shape[0]) if row_ids is None else np.asarray(row_ids, dtype=np.int64)
        values.setflags(write=False)
        labels.setflags(write=False)
        row_ids.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def is_encoded(self) -> bool:
        return self.values.dtype != object

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, values=self.values[idx], labels=self.labels[idx], row_ids=self.row_ids[idx])


def _parse_float(cell: str) -> Optional[float]:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(
    path,
    label: str,
    schema: Optional[Sequence[FeatureSpec]] = None,
    missing_markers: Sequence[str] = DEFAULT_MISSING_MARKERS,
) -> Dataset:
    """Read a headered CSV file, with the class column named by ``label``.

    Without a ``schema``, any column holding a non-numeric, non-missing cell
    is categorical and its categories are the sorted distinct strings.
    """
    path = Path(path)
    missing = set(missing_markers)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path}: no header row") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}"
                )
            rows.append([c.strip() for c in row])
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    if label not in header:
        raise DataFormatError(f"{path}: label column {label!r} not in header {header}")

    label_idx = header.index(label)
    feat_idx = [i for i in range(len(header)) if i != label_idx]
    raw_labels = [r[label_idx] for r in rows]
    if any(lab in missing for lab in raw_labels):
        raise DataFormatError(f"{path}: missing value in label column {label!r}")
    class_names = sorted(set(raw_labels))
    class_of = {c: i for i, c in enumerate(class_names)}

    if schema is None:
        specs = []
        for i in feat_idx:
            present = [r[i] for r in rows if r[i] not in missing]
            if all(_parse_float(c) is not None for c in present):
                specs.append(FeatureSpec(header[i]))
            else:
                specs.append(FeatureSpec(header[i], FeatureKind.CATEGORICAL, sorted(set(present))))
    else:
        specs = list(schema)
        names = [header[i] for i in feat_idx]
        if [s.name for s in specs] != names:
            raise DataFormatError(f"schema names {[s.name for s in specs]} do not match columns {names}")

    values = np.empty((len(rows), len(specs)), dtype=object)
    for j, (i, spec) in enumerate(zip(feat_idx, specs)):
        for r, row in enumerate(rows):
            cell = row[i]
            if cell in missing:
                values[r, j] = None if spec.is_categorical else np.nan
            elif spec.is_categorical:
                values[r, j] = cell
            else:
                x = _parse_float(cell)
                if x is None:
                    raise DataFormatError(
                        f"{path}: row {r + 2}: non-numeric {cell!r} in numeric column {spec.name!r}"
                    )
                values[r, j] = x
    if not any(s.is_categorical for s in specs):
        values = values.astype(np.float64)
    labels = np.array([class_of[c] for c in raw_labels], dtype=np.int64)
    return Dataset(specs, values, labels, class_names)


def encode_labels(ds: Dataset) -> Dataset:
    """Replace each categorical cell by the index of its category."""
    if ds.is_encoded:
        return ds
    out = np.full(ds.values.shape, np.nan)
    for j, spec in enumerate(ds.features):
        col = ds.values[:, j]
        if not spec.is_categorical:
            out[:, j] = np.array([np.nan if v is None else v for v in col], dtype=np.float64)
            continue
        index = {c: k for k, c in enumerate(spec.categories)}
        for r, v in enumerate(col):
            if v is None or (isinstance(v, float) and np.isnan(v)):
                continue
            try:
                out[r, j] = index[v]
            except KeyError:
                raise UnknownCategoryError(spec.name, v) from None
    return replace(ds, values=out)


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and np.isnan(v))


def impute(ds: Dataset) -> Dataset:
    """Fill numeric gaps with the column median and categorical gaps with the mode.

    Works on raw and on encoded datasets.  Mode ties go to the smallest value.
    """
    values = ds.values.copy()
    for j, spec in enumerate(ds.features):
        col = values[:, j]
        miss = np.array([_is_missing(v) for v in col], dtype=bool)
        if not miss.any():
            continue
        if miss.all():
            raise UnusableFeatureError(f"feature {spec.name!r} has no observed values")
        present = col[~miss]
        if spec.is_categorical:
            counts = Counter(present.tolist())
            top = max(counts.values())
            fill = min(v for v, c in counts.items() if c == top)
        else:
            fill = float(np.median(present.astype(np.float64)))
        col[miss] = fill
    return replace(ds, values=values)


def normalize(ds: Dataset, stats: Optional[Sequence[tuple]] = None) -> Dataset:
    """Min-max scale every column into ``[0, 1]``.

    ``stats`` holds one ``(min, max)`` pair per feature; when omitted they are
    taken from ``ds``.  Values outside supplied stats are clamped; constant
    columns map to 0.5.
    """
    if not ds.is_encoded:
        raise DataFormatError("normalize() requires an encoded dataset; call encode_labels first")
    x = ds.values.astype(np.float64)
    if np.isnan(x).any():
        raise DataFormatError("normalize() requires imputed data; found missing cells")
    if stats is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
        stats = tuple((float(a), float(b)) for a, b in zip(lo, hi))
    else:
        stats = tuple((float(a), float(b)) for a, b in stats)
        if len(stats) != ds.n_features:
            raise DataFormatError(f"expected {ds.n_features} (min, max) pairs, got {len(stats)}")
    out = scale_columns(x, stats)
    return replace(ds, values=out, norm_stats=stats)


def scale_columns(x: np.ndarray, stats: Sequence[tuple]) -> np.ndarray:
    lo = np.array([s[0] for s in stats], dtype=np.float64)
    hi = np.array([s[1] for s in stats], dtype=np.float64)
    span = hi - lo
    const = span <= 0
    safe = np.where(const, 1.0, span)
    out = (x - lo) / safe
    out[:, const] = 0.5
    return np.clip(out, 0.0, 1.0)


def _apportion(total: int, fractions: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of ``total * fractions``."""
    raw = total * fractions
    base = np.floor(raw).astype(np.int64)
    left = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:left]] += 1
    return base


def split(ds: Dataset, seed: int, fractions: Sequence[float]) -> list:
    """Stratified, seed-deterministic partition of ``ds`` into ``len(fractions)`` parts.

    Every part receives at least one row of every class.  Rows keep their
    original relative order inside each part.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or fr.size == 0 or (fr <= 0).any():
        raise ValueError("fractions must be a non-empty list of positive reals")
    if not np.isclose(fr.sum(), 1.0):
        raise ValueError(f"fractions must sum to 1, got {fr.sum()}")
    n_parts = fr.size
    classes = np.unique(ds.labels)
    counts = np.array([(ds.labels == c).sum() for c in classes])
    for c, n in zip(classes, counts):
        if n < n_parts:
            raise StratificationError(
                f"class {ds.class_names[c]!r} has {n} rows, fewer than {n_parts} parts"
            )

    targets = _apportion(ds.n_rows, fr)
    raw = counts[:, None] * fr[None, :]
    alloc = np.floor(raw).astype(np.int64)
    deficit = targets - alloc.sum(axis=0)
    for ci in np.argsort(-counts, kind="stable"):
        left = counts[ci] - alloc[ci].sum()
        rem = raw[ci] - np.floor(raw[ci])
        for p in sorted(range(n_parts), key=lambda p: (-rem[p], p)):
            if left == 0:
                break
            if deficit[p] > 0:
                alloc[ci, p] += 1
                deficit[p] -= 1
                left -= 1
        while left > 0:
            p = int(np.argmax(deficit))
            alloc[ci, p] += 1
            deficit[p] -= 1
            left -= 1
        # guarantee one row per part, borrowing from the largest share
        for p in range(n_parts):
            if alloc[ci, p] == 0:
                donor = int(np.argmax(alloc[ci]))
                alloc[ci, donor] -= 1
                alloc[ci, p] += 1

    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(n_parts)]
    for ci, c in enumerate(classes):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(idx.size)]
        bounds = np.concatenate([[0], np.cumsum(alloc[ci])])
        for p in range(n_parts):
            parts[p].extend(idx[bounds[p]:bounds[p + 1]].tolist())
    return [ds.take(np.sort(np.asarray(p, dtype=np.int64))) for p in parts]


def preprocess(ds: Dataset, stats: Optional[Sequence[tuple]] = None) -> Dataset:
    """Convenience chain ``encode_labels -> impute -> normalize``."""
    return normalize(impute(encode_labels(ds)), stats)
