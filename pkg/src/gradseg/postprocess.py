"""Classical refinement of relevance maps.

Otsu thresholding on the 256-bin quantization of a [0, 1] map, then the
morphology chain: histogram equalization -> threshold -> connected
components -> border/small removal -> dilation -> erosion -> hole filling.
Binary morphology and component labeling are delegated to scipy.ndimage;
labels are renumbered here so ids are dense 1..K in row-major
first-encounter order regardless of scipy internals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import check_mask, equalize_histogram


class DegenerateMapError(ValueError):
    """A constant map admits no foreground/background split."""


class DegenerateMapWarning(UserWarning):
    """Emitted when a degenerate map is mapped to an empty mask."""


@dataclass(frozen=True)
class StructuringElement:
    """Neighborhood offsets (dy, dx); must contain the origin and be symmetric."""

    offsets: frozenset

    def __post_init__(self):
        offsets = frozenset((int(dy), int(dx)) for dy, dx in self.offsets)
        if (0, 0) not in offsets:
            raise ValueError("structuring element must contain (0, 0)")
        if any((-dy, -dx) not in offsets for dy, dx in offsets):
            raise ValueError("structuring element must be symmetric under negation")
        object.__setattr__(self, "offsets", offsets)

    def to_array(self) -> np.ndarray:
        """Boolean footprint centered on the origin, for scipy.ndimage."""
        r = max(max(abs(dy), abs(dx)) for dy, dx in self.offsets)
        arr = np.zeros((2 * r + 1, 2 * r + 1), dtype=bool)
        for dy, dx in self.offsets:
            arr[dy + r, dx + r] = True
        return arr


CROSS_3X3 = StructuringElement(frozenset([(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]))


@dataclass
class MorphConfig:
    element: StructuringElement = CROSS_3X3
    dilate_iters: int = 2
    erode_iters: int = 1
    min_component_area: int = 8
    threshold: float | None = None  # None selects Otsu, a float fixes it

    def __post_init__(self):
        if self.dilate_iters < 0 or self.erode_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.min_component_area < 1:
            raise ValueError("min_component_area must be >= 1")
        if self.threshold is not None and not 0 <= self.threshold < 1:
            raise ValueError("fixed threshold must lie in [0, 1)")


def _check_map(map2d) -> np.ndarray:
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"relevance map must be 2-D, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise ValueError("relevance map values must be finite and in [0, 1]")
    return arr


def otsu_threshold(map2d) -> float:
    """Threshold minimizing intra-class variance over 256 quantized bins.

    Pixels quantize to bytes round(v*255); the returned threshold is
    bin/255 with pixels <= threshold counted as background. Ties break
    toward the smallest threshold. The selection maximizes the
    between-class variance with exact integer arithmetic, which is
    equivalent to minimizing the intra-class variance and makes the
    tie-break immune to float rounding.
    """
    arr = _check_map(map2d)
    bins = np.clip(np.rint(arr * 255.0).astype(np.int64), 0, 255)
    hist = np.bincount(bins.ravel(), minlength=256)
    if np.count_nonzero(hist) < 2:
        raise DegenerateMapError("constant map has no valid threshold")

    counts = [int(c) for c in hist]
    sums = [b * c for b, c in zip(range(256), counts)]
    total_n = sum(counts)
    total_s = sum(sums)

    best_bin = 0
    best_num = -1  # (s0*n1 - s1*n0)^2 as an exact integer
    best_den = 1   # n0*n1
    n0 = s0 = 0
    for b in range(256):
        n0 += counts[b]
        s0 += sums[b]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total_s - s0
        num = (s0 * n1 - s1 * n0) ** 2
        # num/den > best_num/best_den, cross-multiplied to stay exact
        if num * best_den > best_num * (n0 * n1):
            best_bin, best_num, best_den = b, num, n0 * n1
    return best_bin / 255.0


def threshold_mask(map2d, t: float) -> np.ndarray:
    """Binary mask with pixel -> 1 iff value > t."""
    if not 0 <= t < 1:
        raise ValueError("threshold must lie in [0, 1)")
    return (_check_map(map2d) > t).astype(np.uint8)


def connected_components(mask) -> np.ndarray:
    """4-connected labeling, ids dense 1..K in row-major first-encounter order."""
    mask = check_mask(mask)
    labels, count = ndimage.label(mask, structure=CROSS_3X3.to_array())
    if count == 0:
        return labels.astype(np.int32)
    flat = labels.ravel()
    first_seen = np.full(count + 1, flat.size, dtype=np.int64)
    nonzero = np.flatnonzero(flat)
    # reversed so the smallest index wins the final assignment
    first_seen[flat[nonzero[::-1]]] = nonzero[::-1]
    order = np.argsort(first_seen[1:], kind="stable") + 1
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order] = np.arange(1, count + 1)
    return remap[labels]


def remove_border_and_small(labeling, min_area: int) -> np.ndarray:
    """Drop components touching any border or smaller than min_area."""
    labels = np.asarray(labeling)
    if labels.ndim != 2:
        raise ValueError("labeling must be 2-D")
    count = int(labels.max())
    if count == 0:
        return np.zeros_like(labels, dtype=np.uint8)
    border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    keep = areas >= min_area
    keep[np.unique(border)] = False
    keep[0] = False
    return keep[labels].astype(np.uint8)


def dilate(mask, element: StructuringElement = CROSS_3X3, iterations: int = 1) -> np.ndarray:
    """Iterated Minkowski dilation; out-of-bounds neighbors are background."""
    mask = check_mask(mask)
    if iterations == 0:
        return mask.copy()
    out = ndimage.binary_dilation(mask, structure=element.to_array(),
                                  iterations=iterations, border_value=0)
    return out.astype(np.uint8)


def erode(mask, element: StructuringElement = CROSS_3X3, iterations: int = 1) -> np.ndarray:
    """Iterated erosion; out-of-bounds neighbors are background."""
    mask = check_mask(mask)
    if iterations == 0:
        return mask.copy()
    out = ndimage.binary_erosion(mask, structure=element.to_array(),
                                 iterations=iterations, border_value=0)
    return out.astype(np.uint8)


def fill_holes(mask) -> np.ndarray:
    """Set background regions (4-connected) unreachable from the border to 1."""
    mask = check_mask(mask)
    return ndimage.binary_fill_holes(mask, structure=CROSS_3X3.to_array()).astype(np.uint8)


def morphology_pipeline(map2d, cfg: MorphConfig | None = None) -> np.ndarray:
    """Equalize -> threshold -> components -> prune -> dilate -> erode -> fill.

    A degenerate (constant) map yields an empty mask and a
    DegenerateMapWarning instead of an error.
    """
    cfg = cfg if cfg is not None else MorphConfig()
    arr = _check_map(map2d)
    equalized = equalize_histogram(arr)
    if cfg.threshold is not None:
        t = cfg.threshold
    else:
        try:
            t = otsu_threshold(equalized)
        except DegenerateMapError:
            warnings.warn("degenerate map: emitting empty mask", DegenerateMapWarning,
                          stacklevel=2)
            return np.zeros(arr.shape, dtype=np.uint8)
    mask = threshold_mask(equalized, t)
    labels = connected_components(mask)
    mask = remove_border_and_small(labels, cfg.min_component_area)
    mask = dilate(mask, cfg.element, cfg.dilate_iters)
    mask = erode(mask, cfg.element, cfg.erode_iters)
    return fill_holes(mask)
