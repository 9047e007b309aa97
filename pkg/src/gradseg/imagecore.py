"""Image and mask value types, raster I/O, and intensity transforms.

Images are float64 arrays of shape (H, W, C) with C in {1, 3} and values
kept in the continuous [0, 1] domain; quantization happens only at file
boundaries. Relevance maps and masks are 2-D (H, W) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# ITU-R 601 luminance triple; the sources never specify a conversion.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported raster files.

    Carries ``offset``, the byte position the problem was detected at.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean/std used to standardize classifier inputs."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise ValueError("normalization stats must be finite")
        if np.any(std <= 0):
            raise ValueError("std must be strictly positive per channel")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


def identity_stats(channels: int) -> NormalizationStats:
    """Stats that make normalize() a no-op."""
    return NormalizationStats(np.zeros(channels), np.ones(channels))


def compute_stats(images) -> NormalizationStats:
    """Per-channel mean/std over a training image collection."""
    if len(images) == 0:
        raise ValueError("cannot compute stats from an empty image list")
    stacked = np.concatenate([as_image(im).reshape(-1, as_image(im).shape[2]) for im in images])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    if np.any(std <= 0):
        raise ValueError("training images have a constant channel; std would be zero")
    return NormalizationStats(mean, std)


def as_image(arr) -> np.ndarray:
    """Coerce to a float64 (H, W, C) image; 2-D input becomes single-channel."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W) or (H, W, C) with C in {{1, 3}}, got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must have at least one row and column")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains NaN or Inf")
    return img


# ---------------------------------------------------------------------------
# PGM / PPM (binary, maxval 255)
# ---------------------------------------------------------------------------

def _read_token(data: bytes, pos: int):
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ImageFormatError("unexpected end of header", offset=pos)
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def _read_int_token(data, pos, what):
    token, pos = _read_token(data, pos)
    try:
        value = int(token)
    except ValueError:
        raise ImageFormatError(f"malformed {what} {token!r}", offset=pos) from None
    return value, pos


def load_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file into a [0, 1] image.

    Bytes map to reals by division with 255. Only maxval 255 is supported.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_token(data, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageFormatError(f"unsupported magic number {magic!r}", offset=0)
    width, pos = _read_int_token(data, pos, "width")
    height, pos = _read_int_token(data, pos, "height")
    maxval, pos = _read_int_token(data, pos, "maxval")
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid dimensions {width}x{height}", offset=pos)
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}, expected 255", offset=pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after maxval", offset=pos)
    pos += 1  # exactly one whitespace byte separates header and payload
    expected = width * height * channels
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise ImageFormatError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}",
            offset=pos + len(payload),
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(height, width, channels)


def save_image(img, path) -> None:
    """Write a [0, 1] image as binary PGM/PPM after x255 quantization."""
    img = as_image(img)
    magic = b"P5" if img.shape[2] == 1 else b"P6"
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(quantized.tobytes())


def save_mask(mask, path) -> None:
    """Write a binary mask as P5 PGM with 0 -> 0 and 1 -> 255."""
    mask = check_mask(mask)
    save_image(mask.astype(np.float64)[:, :, None], path)


def load_mask(path) -> np.ndarray:
    """Load a mask PGM; values threshold at 0.5 back to {0, 1}."""
    img = load_image(path)
    if img.shape[2] != 1:
        raise ImageFormatError("mask files must be single-channel P5")
    return (img[:, :, 0] > 0.5).astype(np.uint8)


def check_mask(mask) -> np.ndarray:
    """Validate a {0, 1} mask and return it as uint8 (H, W)."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask values must be strictly binary")
    return arr.astype(np.uint8)


# ---------------------------------------------------------------------------
# Intensity transforms
# ---------------------------------------------------------------------------

def to_grayscale(img) -> np.ndarray:
    """Reduce a 3-channel image by ITU-R 601 luminance; 1-channel passes through."""
    img = as_image(img)
    if img.shape[2] == 1:
        return img.copy()
    return (img @ _LUMA_WEIGHTS)[:, :, None]


def equalize_histogram(img) -> np.ndarray:
    """256-bin CDF remapping of a single-channel [0, 1] image.

    Output stays in [0, 1] and preserves the input value ordering; a
    constant image maps to a constant.
    """
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if not squeeze:
        arr = as_image(arr)
        if arr.shape[2] != 1:
            raise ValueError("histogram equalization expects a single-channel image")
        arr = arr[:, :, 0]
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("values must lie in [0, 1]")
    bins = np.clip(np.rint(arr * 255.0).astype(np.int64), 0, 255)
    hist = np.bincount(bins.ravel(), minlength=256)
    cdf = np.cumsum(hist) / bins.size
    out = cdf[bins]
    return out if squeeze else out[:, :, None]


def normalize(img, stats: NormalizationStats) -> np.ndarray:
    """Per-channel (v - mean) / std."""
    img = as_image(img)
    if img.shape[2] != stats.channels:
        raise ValueError(f"stats have {stats.channels} channels, image has {img.shape[2]}")
    return (img - stats.mean) / stats.std


def denormalize(img, stats: NormalizationStats) -> np.ndarray:
    """Inverse of normalize() for the same stats."""
    img = as_image(img)
    if img.shape[2] != stats.channels:
        raise ValueError(f"stats have {stats.channels} channels, image has {img.shape[2]}")
    return img * stats.std + stats.mean


# ---------------------------------------------------------------------------
# Resampling (half-pixel-center convention)
# ---------------------------------------------------------------------------

def resize_bilinear(arr, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a 2-D map or (H, W, C) image."""
    src = np.asarray(arr, dtype=np.float64)
    h, w = src.shape[:2]
    if (h, w) == (out_h, out_w):
        return src.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    if src.ndim == 3:
        wy = wy[:, :, None]
        wx = wx[:, :, None]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(arr, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resample; used to upsample masks."""
    src = np.asarray(arr)
    h, w = src.shape[:2]
    if (h, w) == (out_h, out_w):
        return src.copy()
    ys = np.clip(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), 0, h - 1)
    xs = np.clip(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), 0, w - 1)
    return src[np.ix_(ys, xs)]
