"""Normalized-cut bipartition of a pixel affinity graph.

Pixels become nodes; edges connect pixels within a Euclidean radius with
weight exp(-(r_i - r_j)^2 / sigma_r^2) * exp(-||p_i - p_j||^2 / sigma_s^2)
(relevance similarity times spatial proximity). The bipartition minimizes

    NCut(A, B) = Cut(A, B)/Assoc(A, V) + Cut(A, B)/Assoc(B, V)

approximately, by thresholding the eigenvector of the second-smallest
eigenvalue of the generalized problem (D - W) y = lambda D y, solved as a
dense symmetric eigendecomposition of the normalized Laplacian. Maps whose
pixel count exceeds the node budget are bilinearly downsampled first and
the resulting mask is upsampled by nearest neighbor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .imagecore import resize_bilinear, resize_nearest
from .postprocess import DegenerateMapWarning, _check_map


@dataclass
class NcutConfig:
    sigma_r: float = 0.1        # relevance similarity scale
    sigma_s: float = 4.0        # spatial scale, pixels
    radius: int = 5             # neighborhood radius, pixels
    split_candidates: int = 32  # thresholds swept along the eigenvector
    node_budget: int = 1024     # maps above this pixel count are downsampled

    def __post_init__(self):
        if self.sigma_r <= 0 or self.sigma_s <= 0:
            raise ValueError("scales must be positive")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.split_candidates < 1:
            raise ValueError("split_candidates must be >= 1")
        if self.node_budget < 4:
            raise ValueError("node_budget must be >= 4")


@dataclass
class PixelAffinityGraph:
    """Undirected weighted graph; each edge stored once with row < col."""

    node_count: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    degrees: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.degrees = np.asarray(self.degrees, dtype=np.float64)
        if not (self.rows.shape == self.cols.shape == self.weights.shape):
            raise ValueError("edge arrays must share one shape")
        if self.degrees.shape != (self.node_count,):
            raise ValueError("degrees must have one entry per node")
        if np.any(self.rows >= self.cols):
            raise ValueError("edges must satisfy row < col (no self-loops)")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and non-negative")

    @classmethod
    def from_edges(cls, node_count, rows, cols, weights):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        degrees = (np.bincount(rows, weights=weights, minlength=node_count)
                   + np.bincount(cols, weights=weights, minlength=node_count))
        return cls(node_count, rows, cols, weights, degrees)

    def dense_weights(self) -> np.ndarray:
        w = np.zeros((self.node_count, self.node_count))
        w[self.rows, self.cols] = self.weights
        w[self.cols, self.rows] = self.weights
        return w


def _neighbor_offsets(radius: int):
    """Half-plane offsets (dy, dx) with 0 < dy^2 + dx^2 <= radius^2."""
    offs = []
    for dy in range(radius + 1):
        for dx in range(-radius, radius + 1):
            if (dy, dx) <= (0, 0):
                continue
            if dy * dy + dx * dx <= radius * radius:
                offs.append((dy, dx))
    return offs


def build_graph(map2d, cfg: NcutConfig | None = None) -> PixelAffinityGraph:
    """Affinity graph over pixels of a relevance map."""
    cfg = cfg if cfg is not None else NcutConfig()
    rel = _check_map(map2d)
    h, w = rel.shape
    n = h * w
    if n > cfg.node_budget:
        raise ValueError(f"{n} nodes exceed the budget of {cfg.node_budget}; downsample first")

    rows, cols, weights = [], [], []
    idx = np.arange(n).reshape(h, w)
    for dy, dx in _neighbor_offsets(cfg.radius):
        ys = slice(0, h - dy)
        ys2 = slice(dy, h)
        if dx >= 0:
            xs, xs2 = slice(0, w - dx), slice(dx, w)
        else:
            xs, xs2 = slice(-dx, w), slice(0, w + dx)
        i = idx[ys, xs].ravel()
        j = idx[ys2, xs2].ravel()
        if i.size == 0:
            continue
        dr = rel[ys, xs].ravel() - rel[ys2, xs2].ravel()
        wgt = np.exp(-(dr * dr) / cfg.sigma_r ** 2) \
            * math.exp(-(dy * dy + dx * dx) / cfg.sigma_s ** 2)
        rows.append(np.minimum(i, j))
        cols.append(np.maximum(i, j))
        weights.append(wgt)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        weights = np.concatenate(weights)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        weights = np.zeros(0)
    return PixelAffinityGraph.from_edges(n, rows, cols, weights)


def ncut_value(graph: PixelAffinityGraph, partition) -> float:
    """Cut(A,B)/Assoc(A,V) + Cut(A,B)/Assoc(B,V) for a boolean partition."""
    part = np.asarray(partition, dtype=bool)
    if part.shape != (graph.node_count,):
        raise ValueError("partition must assign every node")
    if part.all() or not part.any():
        raise ValueError("both sides of the partition must be non-empty")
    crossing = part[graph.rows] != part[graph.cols]
    cut = float(graph.weights[crossing].sum())
    assoc_a = float(graph.degrees[part].sum())
    assoc_b = float(graph.degrees[~part].sum())
    if assoc_a == 0 or assoc_b == 0:
        raise ValueError("ncut undefined: one side has zero association")
    return cut / assoc_a + cut / assoc_b


def _sweep_thresholds(graph, active, y, candidates):
    """Best partition from thresholding y at evenly spaced interior levels."""
    best = None
    best_value = np.inf
    levels = np.linspace(y.min(), y.max(), candidates + 2)[1:-1]
    for level in levels:
        side_a = y > level
        if not side_a.any() or side_a.all():
            continue
        part = np.zeros(graph.node_count, dtype=bool)
        part[active] = side_a
        try:
            value = ncut_value(graph, part)
        except ValueError:
            continue
        if value < best_value:
            best, best_value = part, value
    return best, best_value


def spectral_bipartition(graph: PixelAffinityGraph, cfg: NcutConfig | None = None) -> np.ndarray:
    """Boolean partition (True = side A) minimizing the swept NCut value.

    Solves the normalized Laplacian D^{-1/2}(D - W)D^{-1/2} densely and
    sweeps split_candidates thresholds over the generalized eigenvector of
    the second-smallest eigenvalue. Zero-degree nodes are pre-assigned to
    side B and excluded from the eigenproblem. When the two smallest
    eigenvalues coincide numerically (disconnected graph) the eigenvector
    basis of the shared eigenspace is arbitrary, so the sweep also scans
    the first eigenvector.
    """
    cfg = cfg if cfg is not None else NcutConfig()
    if graph.node_count < 2:
        raise ValueError("need at least two nodes")
    active = np.flatnonzero(graph.degrees > 0)
    if active.size < 2:
        return np.zeros(graph.node_count, dtype=bool)

    pos = np.full(graph.node_count, -1, dtype=np.int64)
    pos[active] = np.arange(active.size)
    keep = (pos[graph.rows] >= 0) & (pos[graph.cols] >= 0)
    w = np.zeros((active.size, active.size))
    w[pos[graph.rows[keep]], pos[graph.cols[keep]]] = graph.weights[keep]
    w += w.T
    d = graph.degrees[active]
    inv_sqrt = 1.0 / np.sqrt(d)
    lap = -(w * inv_sqrt[:, None]) * inv_sqrt[None, :]
    np.fill_diagonal(lap, 1.0)

    top = min(1, active.size - 1)
    vals, vecs = scipy.linalg.eigh(lap, subset_by_index=[0, top], driver="evr",
                                   check_finite=False)
    # generalized eigenvectors of (D - W) y = lambda D y
    ys = vecs * inv_sqrt[:, None]

    best, best_value = _sweep_thresholds(graph, active, ys[:, top], cfg.split_candidates)
    if top == 1 and (vals[1] - vals[0] <= 1e-12 or best is None):
        alt, alt_value = _sweep_thresholds(graph, active, ys[:, 0], cfg.split_candidates)
        if alt is not None and alt_value < best_value:
            best, best_value = alt, alt_value
    if best is None:
        raise RuntimeError("threshold sweep produced no valid bipartition")
    return best


def ncut_segment(map2d, cfg: NcutConfig | None = None) -> np.ndarray:
    """Relevance map -> binary mask via spectral bipartition.

    The side with the higher mean relevance becomes foreground. A constant
    map is degenerate and maps to an empty mask with a warning.
    """
    cfg = cfg if cfg is not None else NcutConfig()
    rel = _check_map(map2d)
    h, w = rel.shape
    if rel.max() - rel.min() <= 0:
        warnings.warn("degenerate constant map: emitting empty mask",
                      DegenerateMapWarning, stacklevel=2)
        return np.zeros((h, w), dtype=np.uint8)

    work = rel
    if h * w > cfg.node_budget:
        scale = math.sqrt(cfg.node_budget / (h * w))
        th = max(2, int(h * scale))
        tw = max(2, int(w * scale))
        work = np.clip(resize_bilinear(rel, th, tw), 0.0, 1.0)

    graph = build_graph(work, cfg)
    part = spectral_bipartition(graph, cfg)
    flat = work.ravel()
    if not part.any():
        mask_small = np.zeros(work.shape, dtype=np.uint8)
    else:
        mean_a = flat[part].mean()
        mean_b = flat[~part].mean() if (~part).any() else -np.inf
        fg = part if mean_a > mean_b else ~part
        mask_small = fg.reshape(work.shape).astype(np.uint8)
    if work.shape != rel.shape:
        return resize_nearest(mask_small, h, w).astype(np.uint8)
    return mask_small
