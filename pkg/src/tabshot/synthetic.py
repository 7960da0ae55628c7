"""Synthetic stand-ins for real corpora, small enough for a laptop.

``make_block_corpus`` produces a many-class image corpus for meta-training:
each class is a random block pattern on a small grid, instances are noisy
copies of it, tiled to 84x84 exactly like tabular images.
``make_gaussian_table`` produces a two-class table with a chosen number of
informative columns.
"""

from __future__ import annotations

import numpy as np

from .transform import IMAGE_SIZE, repeat_factors


def _tile_batch(grids: np.ndarray) -> np.ndarray:
    n, nr, nc = grids.shape
    tr, tc = repeat_factors(nr, nc)
    rows = (np.arange(IMAGE_SIZE) // tr)[:, None]
    cols = (np.arange(IMAGE_SIZE) // tc)[None, :]
    planes = grids[:, rows, cols]
    return np.repeat(planes[:, None], 3, axis=1).astype(np.float32)


def make_block_corpus(n_classes: int = 32, per_class: int = 20, noise: float = 0.15,
                      grid_sizes=(2, 3, 4, 5, 6, 8), seed: int = 0):
    """Images ``(n_classes * per_class, 3, 84, 84)`` in [0, 1] and integer labels."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in range(n_classes):
        nr = int(rng.choice(grid_sizes))
        nc = int(rng.choice(grid_sizes))
        proto = rng.uniform(0.0, 1.0, size=(nr, nc))
        grids = np.clip(proto + noise * rng.standard_normal((per_class, nr, nc)), 0.0, 1.0)
        images.append(_tile_batch(grids))
        labels.append(np.full(per_class, c))
    return np.concatenate(images), np.concatenate(labels)


def make_gaussian_table(n_rows: int = 400, n_features: int = 9, n_informative: int = 2,
                        separation: float = 3.0, seed: int = 0):
    """Balanced two-class table.

    Every column is unit-variance Gaussian within a class; the first
    ``n_informative`` columns have class means ``separation`` standard
    deviations apart.  The feature order is shuffled so informative columns
    are not adjacent by construction.
    """
    rng = np.random.default_rng(seed)
    y = np.arange(n_rows) % 2
    x = rng.standard_normal((n_rows, n_features))
    x[:, :n_informative] += separation * y[:, None]
    order = rng.permutation(n_features)
    perm = rng.permutation(n_rows)
    return x[perm][:, order], y[perm]
