"""Table rows to 3x84x84 images.

Features are placed on an ``n_rows x n_cols`` grid so that the rank of the
distance between two feature columns agrees as closely as possible with the
rank of the distance between the cells they occupy.  The grid is then
upscaled by element repetition to 84x84 and copied to three channels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy.spatial.distance import pdist, squareform
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import scale_columns
from .exceptions import DegenerateInputError, DimensionError, TooManyFeaturesError

IMAGE_SIZE = 84
MAX_ASPECT = 3
PAD_VALUE = 0.5
DISTANCE_MODES = ("euclidean", "one_minus")
LAYOUT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    n_rows: int
    n_cols: int
    n_features: int  # data features before padding

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise DimensionError("grid sides must be positive")
        if self.n_rows > IMAGE_SIZE or self.n_cols > IMAGE_SIZE:
            raise DimensionError(f"grid {self.n_rows}x{self.n_cols} exceeds {IMAGE_SIZE}")
        if self.n_features > self.n_cells:
            raise DimensionError("more features than grid cells")

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def n_padding(self) -> int:
        return self.n_cells - self.n_features


def _best_factor_pair(n: int):
    best = None
    for r in range(1, int(np.sqrt(n)) + 1):
        if n % r == 0 and n // r <= IMAGE_SIZE:
            best = (r, n // r)
    return best


def choose_grid(n_features: int) -> GridSpec:
    """Most square grid holding ``n_features`` cells.

    When the best exact factorisation is more elongated than 3:1 (primes
    above 3, or e.g. 22 = 2x11) the feature count is padded upwards until a
    factor pair within that aspect ratio exists.
    """
    if n_features < 1:
        raise DegenerateInputError("need at least one feature")
    if n_features > IMAGE_SIZE * IMAGE_SIZE:
        raise TooManyFeaturesError(
            f"{n_features} features exceed the {IMAGE_SIZE}x{IMAGE_SIZE} pixel budget"
        )
    n = n_features
    while True:
        pair = _best_factor_pair(n)
        if pair is not None and pair[1] <= MAX_ASPECT * pair[0]:
            return GridSpec(pair[0], pair[1], n_features)
        n += 1


def _tie_ranks_lower(dist: np.ndarray, ascending: bool = True) -> np.ndarray:
    n = dist.shape[0]
    rows, cols = np.tril_indices(n, k=-1)
    vals = np.round(dist[rows, cols], decimals=10)
    ranks = rankdata(vals if ascending else -vals, method="average")
    out = np.zeros((n, n))
    out[rows, cols] = ranks
    return out + out.T


def pixel_distance_ranking(grid: GridSpec) -> np.ndarray:
    """Average-tie ranks of Euclidean distances between all pairs of grid cells (row-major)."""
    rr, cc = np.meshgrid(np.arange(grid.n_rows), np.arange(grid.n_cols), indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    return _tie_ranks_lower(np.sqrt((diff ** 2).sum(-1)))


def feature_distance_ranking(values, mode: str = "euclidean") -> np.ndarray:
    """Average-tie ranks of Euclidean distances between feature columns.

    In ``"euclidean"`` mode the most similar pair gets rank 1.  ``"one_minus"``
    ranks ``1 - distance`` instead, which reverses the order.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DegenerateInputError("need a 2-D matrix with at least two feature columns")
    if mode not in DISTANCE_MODES:
        raise ValueError(f"unknown distance mode {mode!r}; expected one of {DISTANCE_MODES}")
    d = squareform(pdist(x.T, metric="euclidean"))
    if mode == "one_minus":
        d = 1.0 - d
    return _tie_ranks_lower(d)


def _check_square_pair(R, Q):
    R = np.asarray(R, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape != Q.shape:
        raise DimensionError(f"R {R.shape} and Q {Q.shape} must be equal square matrices")
    return R, Q


def layout_loss(R, Q, assignment) -> float:
    """Sum over feature pairs i<j of (R[i,j] - Q[cell(i), cell(j)])**2."""
    R, Q = _check_square_pair(R, Q)
    pi = np.asarray(assignment, dtype=np.int64)
    if pi.shape != (R.shape[0],) or not np.array_equal(np.sort(pi), np.arange(R.shape[0])):
        raise DimensionError("assignment must be a permutation of range(N)")
    diff = R - Q[np.ix_(pi, pi)]
    return float(np.tril(diff ** 2, k=-1).sum())


@dataclass
class FeatureLayout:
    grid: GridSpec
    assignment: np.ndarray  # feature index -> row-major cell index
    loss: float
    seed: int
    sweeps_run: int
    distance_mode: str = "euclidean"
    loss_trace: list = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "format_version": LAYOUT_FORMAT_VERSION,
            "n_rows": self.grid.n_rows,
            "n_cols": self.grid.n_cols,
            "n_features": self.grid.n_features,
            "assignment": [int(a) for a in self.assignment],
            "loss": self.loss,
            "loss_convention": "strict lower triangle, each pair once",
            "seed": self.seed,
            "sweeps_run": self.sweeps_run,
            "distance_mode": self.distance_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        grid = GridSpec(d["n_rows"], d["n_cols"], d["n_features"])
        pi = np.asarray(d["assignment"], dtype=np.int64)
        if pi.shape != (grid.n_cells,) or not np.array_equal(np.sort(pi), np.arange(grid.n_cells)):
            raise DimensionError("layout assignment is not a permutation of the grid cells")
        return cls(grid, pi, float(d["loss"]), int(d["seed"]), int(d["sweeps_run"]),
                   d.get("distance_mode", "euclidean"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureLayout":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def layout_id(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _swap_delta(R, Q, cell_of, f, g) -> float:
    """Loss change if features f and g exchange cells; other assignments fixed."""
    a, b = cell_of[f], cell_of[g]
    qf = Q[a, cell_of]
    qg = Q[b, cell_of]
    rf, rg = R[f], R[g]
    mask = np.ones(R.shape[0], dtype=bool)
    mask[[f, g]] = False
    new = (rf - qg) ** 2 + (rg - qf) ** 2
    old = (rf - qf) ** 2 + (rg - qg) ** 2
    return float((new - old)[mask].sum())


def optimize_layout(R, Q, seed: int = 0, max_sweeps: int = 50, grid: Optional[GridSpec] = None,
                    distance_mode: str = "euclidean") -> FeatureLayout:
    """Pairwise-swap hill climbing from the identity assignment.

    Each sweep visits every unordered pair of cells in a freshly shuffled
    order and exchanges their features when that strictly lowers the loss.
    Stops after a sweep without an accepted swap or after ``max_sweeps``.
    """
    R, Q = _check_square_pair(R, Q)
    n = R.shape[0]
    if grid is None:
        grid = choose_grid(n)
        if grid.n_cells != n:
            grid = GridSpec(1, n, n)
    if grid.n_cells != n:
        raise DimensionError(f"grid has {grid.n_cells} cells but R is {n}x{n}")
    rng = np.random.default_rng(seed)
    cell_of = np.arange(n)
    feat_at = np.arange(n)
    loss = layout_loss(R, Q, cell_of)
    trace = [loss]
    pairs = np.array(np.triu_indices(n, k=1)).T
    sweeps = 0
    while sweeps < max_sweeps and len(pairs):
        sweeps += 1
        accepted = 0
        for a, b in pairs[rng.permutation(len(pairs))]:
            f, g = feat_at[a], feat_at[b]
            delta = _swap_delta(R, Q, cell_of, f, g)
            if delta < 0:
                cell_of[f], cell_of[g] = b, a
                feat_at[a], feat_at[b] = g, f
                loss += delta
                trace.append(loss)
                accepted += 1
        if accepted == 0:
            break
    # ranks are half-integers, so the incremental sum is exact; recompute anyway
    loss = layout_loss(R, Q, cell_of)
    return FeatureLayout(grid, cell_of.copy(), loss, int(seed), sweeps, distance_mode, trace)


def fit_layout(values, grid: Optional[GridSpec] = None, seed: int = 0, max_sweeps: int = 50,
               distance_mode: str = "euclidean") -> FeatureLayout:
    """Grid choice, padding, both rankings and the swap search in one call."""
    x = np.asarray(values, dtype=np.float64)
    grid = grid or choose_grid(x.shape[1])
    x = pad_features(x, grid)
    if grid.n_cells == 1:
        return FeatureLayout(grid, np.zeros(1, dtype=np.int64), 0.0, int(seed), 0, distance_mode, [0.0])
    R = feature_distance_ranking(x, mode=distance_mode)
    Q = pixel_distance_ranking(grid)
    return optimize_layout(R, Q, seed=seed, max_sweeps=max_sweeps, grid=grid, distance_mode=distance_mode)


def pad_features(x: np.ndarray, grid: GridSpec) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] == grid.n_cells:
        return x
    if x.shape[1] != grid.n_features:
        raise DimensionError(f"expected {grid.n_features} features, got {x.shape[1]}")
    pad = np.full((x.shape[0], grid.n_padding), PAD_VALUE)
    return np.hstack([x, pad])


def assemble_grid(row, layout: FeatureLayout) -> np.ndarray:
    """Place feature f of ``row`` at cell ``layout.assignment[f]``."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size != layout.grid.n_cells:
        raise DimensionError(f"row of length {row.size} does not fit {layout.grid.n_cells} cells")
    flat = np.empty(layout.grid.n_cells)
    flat[layout.assignment] = row
    return flat.reshape(layout.grid.n_rows, layout.grid.n_cols)


def repeat_factors(n_rows: int, n_cols: int):
    return IMAGE_SIZE // n_rows + 1, IMAGE_SIZE // n_cols + 1


def tile_to_image(m) -> np.ndarray:
    """Upscale an ``n_rows x n_cols`` grid to ``(3, 84, 84)``.

    Each element is repeated ``84 // n + 1`` times along each axis and the
    result cropped to the top-left 84x84, i.e. pixel (r, c) takes
    ``m[r // t_r, c // t_c]``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError("grid must be 2-D")
    nr, nc = m.shape
    if not (1 <= nr <= IMAGE_SIZE and 1 <= nc <= IMAGE_SIZE):
        raise DimensionError(f"grid {nr}x{nc} outside 1..{IMAGE_SIZE}")
    tr, tc = repeat_factors(nr, nc)
    rows = np.arange(IMAGE_SIZE) // tr
    cols = np.arange(IMAGE_SIZE) // tc
    plane = m[np.ix_(rows, cols)]
    return np.broadcast_to(plane, (3, IMAGE_SIZE, IMAGE_SIZE)).copy()


def rows_to_images(x, layout: FeatureLayout) -> np.ndarray:
    """Vectorised assemble + tile for a batch; returns float32 ``(n, 3, 84, 84)``."""
    x = pad_features(x, layout.grid)
    g = layout.grid
    grids = np.empty((x.shape[0], g.n_cells))
    grids[:, layout.assignment] = x
    grids = grids.reshape(-1, g.n_rows, g.n_cols)
    tr, tc = repeat_factors(g.n_rows, g.n_cols)
    planes = grids[:, (np.arange(IMAGE_SIZE) // tr)[:, None], (np.arange(IMAGE_SIZE) // tc)[None, :]]
    return np.repeat(planes[:, None], 3, axis=1).astype(np.float32)


def render_png(image, path) -> None:
    """Write an image as 8-bit RGB PNG, intensity ``round(255 * pixel)``."""
    img = np.asarray(image, dtype=np.float64)
    if img.shape != (3, IMAGE_SIZE, IMAGE_SIZE):
        raise DimensionError(f"expected (3, 84, 84), got {img.shape}")
    if img.min() < 0 or img.max() > 1:
        raise ValueError("pixels must lie in [0, 1]")
    data = np.rint(255.0 * img).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(data, mode="RGB").save(Path(path), format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.float64)
    return data.transpose(2, 0, 1) / 255.0


class TabularImageTransformer(TransformerMixin, BaseEstimator):
    """Turn numeric table rows into rank-aligned tabular images.

    ``fit`` learns the min-max statistics and the feature layout from ``X``
    (labels are never used); ``transform`` returns ``(n, 3, 84, 84)`` float32
    arrays.  Inputs must already be label encoded and imputed.

    Parameters
    ----------
    layout_seed : int
        Seed for the sweep order of the swap search.
    max_sweeps : int
        Upper bound on swap-search sweeps.
    distance_mode : {"euclidean", "one_minus"}
        How column distances are ranked.
    normalize : bool
        Min-max scale columns with statistics from ``fit``; clamp at transform time.
    """

    def __init__(self, layout_seed=0, max_sweeps=50, distance_mode="euclidean", normalize=True):
        self.layout_seed = layout_seed
        self.max_sweeps = max_sweeps
        self.distance_mode = distance_mode
        self.normalize = normalize

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        if self.normalize:
            self.norm_stats_ = tuple(zip(X.min(axis=0).tolist(), X.max(axis=0).tolist()))
            X = scale_columns(X, self.norm_stats_)
        elif X.min() < 0 or X.max() > 1:
            raise ValueError("with normalize=False, X must already lie in [0, 1]")
        self.layout_ = fit_layout(X, seed=self.layout_seed, max_sweeps=self.max_sweeps,
                                  distance_mode=self.distance_mode)
        self.grid_ = self.layout_.grid
        return self

    def _scaled(self, X):
        check_is_fitted(self, "layout_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if self.normalize:
            X = scale_columns(X, self.norm_stats_)
        return np.clip(X, 0.0, 1.0)

    def transform(self, X):
        return rows_to_images(self._scaled(X), self.layout_)

    def transform_grids(self, X):
        """Un-tiled ``(n, n_rows, n_cols)`` grids, handy for inspection."""
        X = pad_features(self._scaled(X), self.grid_)
        return np.stack([assemble_grid(r, self.layout_) for r in X])
