"""Input validation helpers for the estimator API.

These canonicalize the array-of-images shapes the estimators accept:
a list of (H, W) / (H, W, C) arrays or a stacked (n, H, W[, C]) array.
"""

from __future__ import annotations

import numpy as np

from .imagecore import as_image


def check_image_batch(X) -> list:
    """Coerce X into a list of float64 (H, W, C) images with one shared shape."""
    if isinstance(X, np.ndarray) and X.ndim in (3, 4):
        images = [as_image(X[i]) for i in range(X.shape[0])]
    else:
        images = [as_image(x) for x in X]
    if not images:
        raise ValueError("empty image batch")
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ValueError(f"images must share one shape, got {sorted(shapes)}")
    return images


def check_labels(y, n: int) -> np.ndarray:
    labels = np.asarray(y)
    if labels.ndim != 1 or labels.shape[0] != n:
        raise ValueError(f"y must be 1-D with {n} entries, got shape {labels.shape}")
    return labels


def stack_masks(masks) -> np.ndarray:
    return np.stack([np.asarray(m, dtype=np.uint8) for m in masks])
