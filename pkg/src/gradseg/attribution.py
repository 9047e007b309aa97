"""Gradient attribution: integrated gradients with noise-tunnel averaging.

The attribution for pixel i is (x_i - x'_i) times the path integral of the
target logit's gradient along the straight line from baseline x' to input
x, approximated by a left Riemann sum at alpha_k = k/steps. Noise-tunnel
averages that attribution over Gaussian-perturbed copies of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import classifier as clf
from .imagecore import as_image, save_image

_BATCH = 32  # path points evaluated per matmul batch


@dataclass
class IgConfig:
    steps: int = 50
    baseline: np.ndarray | None = None  # None means the all-zero image
    nt_samples: int = 5
    nt_sigma: float | None = None  # None: 0.1 x the input's value range
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.nt_samples < 1:
            raise ValueError("nt_samples must be >= 1")
        if self.nt_sigma is not None and self.nt_sigma < 0:
            raise ValueError("nt_sigma must be >= 0")
        if self.baseline is not None:
            self.baseline = as_image(self.baseline)


def _resolve_baseline(img: np.ndarray, cfg: IgConfig) -> np.ndarray:
    if cfg.baseline is None:
        return np.zeros_like(img)
    if cfg.baseline.shape != img.shape:
        raise ValueError(
            f"baseline shape {cfg.baseline.shape} does not match input {img.shape}")
    return cfg.baseline


def integrated_gradients(params, img, target_class: int, cfg: IgConfig) -> np.ndarray:
    """Left-Riemann integrated gradients for one image, same shape as img."""
    img = as_image(img)
    baseline = _resolve_baseline(img, cfg)
    diff = img - baseline
    alphas = np.arange(cfg.steps) / cfg.steps
    grad_sum = np.zeros_like(img)
    for start in range(0, cfg.steps, _BATCH):
        chunk = alphas[start:start + _BATCH]
        points = baseline[None] + chunk[:, None, None, None] * diff[None]
        grads = clf._input_gradient_batch(params, points, target_class)
        grad_sum += grads.sum(axis=0)
    return diff * (grad_sum / cfg.steps)


def noise_tunnel(params, img, target_class: int, cfg: IgConfig) -> np.ndarray:
    """Mean integrated-gradients attribution over Gaussian-perturbed inputs.

    Per-sample noise comes from independent substreams spawned off
    cfg.seed, so the average is order-independent and reproducible.
    """
    img = as_image(img)
    sigma = cfg.nt_sigma
    if sigma is None:
        sigma = 0.1 * (img.max() - img.min())
    if sigma == 0:
        # every sample is identical, so the mean is a single evaluation
        return integrated_gradients(params, img, target_class, cfg)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.nt_samples)
    total = np.zeros_like(img)
    for stream in streams:
        noise = np.random.default_rng(stream).normal(0.0, sigma, size=img.shape)
        total += integrated_gradients(params, img + noise, target_class, cfg)
    return total / cfg.nt_samples


def to_relevance_map(attribution) -> np.ndarray:
    """Channel sum -> absolute value -> min-max normalization to [0, 1].

    Opposing per-channel evidence cancels before the magnitude is taken; a
    constant magnitude map normalizes to all zeros.
    """
    attr = as_image(attribution)
    magnitude = np.abs(attr.sum(axis=2))
    span = magnitude.max() - magnitude.min()
    if span <= 0:
        return np.zeros_like(magnitude)
    return (magnitude - magnitude.min()) / span


def save_relevance(map2d, path) -> None:
    """Debug dump of a relevance map as P5 PGM after x255 quantization."""
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2 or arr.min() < 0 or arr.max() > 1:
        raise ValueError("relevance map must be 2-D with values in [0, 1]")
    save_image(arr[:, :, None], path)
