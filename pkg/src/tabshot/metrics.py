"""Accuracy, AUC and the two-circle domain coverage check."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .exceptions import DataFormatError, DegenerateInputError, DimensionError, UndefinedMetricError

INNER_RADIUS_FRACTION = 0.8


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise DimensionError(f"predictions {p.shape} and labels {y.shape} must be equal-length vectors")
    if p.size == 0:
        raise DimensionError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(p == y)) / p.size


def auc_binary(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counting one half.

    Computed from average-tie ranks, which gives exactly the pairwise
    concordance count divided by ``n_pos * n_neg``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DimensionError("scores and labels must be equal-length vectors")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    r = rankdata(s, method="average")
    # twice the U statistic is an integer, so this division is the exact ratio
    u2 = 2.0 * r[pos].sum() - n_pos * (n_pos + 1)
    return float(u2 / (2.0 * n_pos * n_neg))


def auc_macro_ovr(probabilities, labels) -> float:
    """Mean one-vs-rest AUC over classes; every class must appear in ``labels``."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2 or p.shape[0] != y.size:
        raise DimensionError("probabilities must be (n_samples, n_classes)")
    missing = [c for c in range(p.shape[1]) if not (y == c).any()]
    if missing:
        raise UndefinedMetricError(f"classes {missing} absent from labels")
    return float(np.mean([auc_binary(p[:, c], (y == c).astype(int)) for c in range(p.shape[1])]))


@dataclass(frozen=True)
class CoverageResult:
    distance_max: float
    frac_inside_c1: float
    frac_inside_c2: float
    center: tuple

    @property
    def radius_c1(self) -> float:
        return self.distance_max

    @property
    def radius_c2(self) -> float:
        return INNER_RADIUS_FRACTION * self.distance_max

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = [float(c) for c in self.center]
        d["radius_c1"] = self.radius_c1
        d["radius_c2"] = self.radius_c2
        return d


def domain_coverage(natural_2d, tabular_2d) -> CoverageResult:
    """Fractions of tabular points inside the natural cloud's full and 0.8 radius circles.

    Both circles are centred on the natural points' mean; the outer radius is
    the largest natural distance from it.  Points on a circle count as inside.
    """
    nat = np.asarray(natural_2d, dtype=np.float64).reshape(-1, 2)
    tab = np.asarray(tabular_2d, dtype=np.float64).reshape(-1, 2)
    if nat.shape[0] == 0:
        raise DegenerateInputError("natural point set is empty")
    center = nat.mean(axis=0)
    dmax = float(np.sqrt(((nat - center) ** 2).sum(1)).max())
    if tab.shape[0] == 0:
        return CoverageResult(dmax, 0.0, 0.0, tuple(center))
    dist = np.sqrt(((tab - center) ** 2).sum(1))
    in1 = float(np.count_nonzero(dist <= dmax)) / tab.shape[0]
    in2 = float(np.count_nonzero(dist <= INNER_RADIUS_FRACTION * dmax)) / tab.shape[0]
    return CoverageResult(dmax, in1, in2, tuple(float(c) for c in center))


def project_2d(latents) -> np.ndarray:
    """Project onto the top two principal directions.

    Each direction's sign is fixed so that its first non-zero coordinate is
    positive.  Missing directions (rank < 2) come out as zero columns.
    """
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateInputError("need at least two latent vectors")
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = max(x.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    out = np.zeros((x.shape[0], 2))
    for k in range(min(2, vt.shape[0])):
        if s[k] <= tol:
            continue
        v = vt[k]
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        if nz.size and v[nz[0]] < 0:
            v = -v
        out[:, k] = xc @ v
    return out


def read_points_csv(path):
    """Read an ``x,y,set`` file; returns ``(natural, tabular)`` point arrays."""
    path = Path(path)
    nat, tab = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y", "set"} <= set(reader.fieldnames):
            raise DataFormatError(f"{path}: header must contain x,y,set")
        for lineno, row in enumerate(reader, start=2):
            try:
                pt = (float(row["x"]), float(row["y"]))
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}: row {lineno}: non-numeric coordinate") from None
            kind = (row["set"] or "").strip()
            if kind == "natural":
                nat.append(pt)
            elif kind == "tabular":
                tab.append(pt)
            else:
                raise DataFormatError(f"{path}: row {lineno}: set must be natural or tabular, got {kind!r}")
    return np.array(nat).reshape(-1, 2), np.array(tab).reshape(-1, 2)


def write_points_csv(path, natural, tabular) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "set"])
        for kind, pts in (("natural", natural), ("tabular", tabular)):
            for x, y in np.asarray(pts, dtype=np.float64).reshape(-1, 2):
                w.writerow([repr(float(x)), repr(float(y)), kind])
