"""Reference differentiable classification network.

Architecture: conv(3x3, 8, ReLU) -> conv(3x3, 16, ReLU) -> global average
pool -> linear head. Convolutions use zero padding and stride 1 so every
feature map keeps the input's spatial grid. Forward, exact reverse-mode
input gradients, spatial feature maps, and an SGD-with-momentum trainer
are all implemented directly on numpy arrays; that keeps the whole chain
from logits down to per-pixel gradients inspectable and bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import NormalizationStats, as_image

CONV1_FILTERS = 8
CONV2_FILTERS = 16
KERNEL = 3

_CHECKPOINT_MAGIC = b"GSEGNET"
_CHECKPOINT_VERSION = 1


@dataclass
class ClassifierParams:
    """Weights of the two conv layers and the linear head."""

    conv1_w: np.ndarray  # (8, 3, 3, C)
    conv1_b: np.ndarray  # (8,)
    conv2_w: np.ndarray  # (16, 3, 3, 8)
    conv2_b: np.ndarray  # (16,)
    head_w: np.ndarray   # (num_classes, 16)
    head_b: np.ndarray   # (num_classes,)

    def __post_init__(self):
        for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.conv1_w.shape[:3] != (CONV1_FILTERS, KERNEL, KERNEL):
            raise ValueError(f"conv1_w must be (8, 3, 3, C), got {self.conv1_w.shape}")
        if self.conv2_w.shape != (CONV2_FILTERS, KERNEL, KERNEL, CONV1_FILTERS):
            raise ValueError(f"conv2_w must be (16, 3, 3, 8), got {self.conv2_w.shape}")
        if self.head_w.shape[1] != CONV2_FILTERS or self.head_w.shape[0] < 2:
            raise ValueError(f"head_w must be (num_classes >= 2, 16), got {self.head_w.shape}")
        for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def in_channels(self) -> int:
        return self.conv1_w.shape[3]

    @property
    def num_classes(self) -> int:
        return self.head_w.shape[0]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(*(a.copy() for a in self._arrays()))

    def _arrays(self):
        return (self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
                self.head_w, self.head_b)


@dataclass
class TrainConfig:
    """SGD schedule: base rate decays by decay_factor every decay_every epochs."""

    epochs: int
    learning_rate: float = 0.005
    momentum: float = 0.9
    decay_factor: float = 0.1
    decay_every: int = 50
    seed: int = 0
    freeze_backbone: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")


@dataclass
class LabeledDataset:
    """Images paired with class indices in [0, num_classes)."""

    images: list
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.images = [as_image(im) for im in self.images]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != self.labels.shape[0]:
            raise ValueError("images and labels disagree in length")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        shapes = {im.shape for im in self.images}
        if len(shapes) > 1:
            raise ValueError(f"all images must share one shape, got {sorted(shapes)}")

    def __len__(self):
        return len(self.images)


def init_params(in_channels: int, num_classes: int, rng: np.random.Generator) -> ClassifierParams:
    """Seeded uniform(-0.05, 0.05) initialization, declaration order."""
    def u(*shape):
        return rng.uniform(-0.05, 0.05, size=shape)

    return ClassifierParams(
        conv1_w=u(CONV1_FILTERS, KERNEL, KERNEL, in_channels),
        conv1_b=u(CONV1_FILTERS),
        conv2_w=u(CONV2_FILTERS, KERNEL, KERNEL, CONV1_FILTERS),
        conv2_b=u(CONV2_FILTERS),
        head_w=u(num_classes, CONV2_FILTERS),
        head_b=u(num_classes),
    )


# ---------------------------------------------------------------------------
# Forward / backward. Everything operates on batches (B, H, W, C); the
# public single-image API wraps B=1. Convolutions go through im2col so both
# directions are plain matmuls.
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B, H*W, 9*C) patches of the zero-padded input."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))  # (B,H,W,C,3,3)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b, h * w, KERNEL * KERNEL * c)


def _col2im(cols: np.ndarray, h: int, w: int, c: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch gradients back onto the grid."""
    b = cols.shape[0]
    grads = cols.reshape(b, h, w, KERNEL, KERNEL, c)
    out = np.zeros((b, h + 2, w + 2, c))
    for ky in range(KERNEL):
        for kx in range(KERNEL):
            out[:, ky:ky + h, kx:kx + w, :] += grads[:, :, :, ky, kx, :]
    return out[:, 1:h + 1, 1:w + 1, :]


def _kernel_matrix(conv_w: np.ndarray) -> np.ndarray:
    """(F, 3, 3, C) kernels flattened to (9*C, F) for im2col matmuls."""
    f = conv_w.shape[0]
    return conv_w.transpose(1, 2, 3, 0).reshape(-1, f)


def _forward_batch(params: ClassifierParams, xs: np.ndarray):
    """Forward pass keeping every intermediate needed for backprop."""
    b, h, w, _ = xs.shape
    p1 = _im2col(xs)
    pre1 = p1 @ _kernel_matrix(params.conv1_w) + params.conv1_b
    a1 = np.maximum(pre1, 0.0)
    p2 = _im2col(a1.reshape(b, h, w, CONV1_FILTERS))
    pre2 = p2 @ _kernel_matrix(params.conv2_w) + params.conv2_b
    a2 = np.maximum(pre2, 0.0)
    feats = a2.mean(axis=1)  # global average pool, (B, 16)
    logits = feats @ params.head_w.T + params.head_b
    return {"p1": p1, "pre1": pre1, "p2": p2, "pre2": pre2, "a2": a2,
            "feats": feats, "logits": logits, "shape": (b, h, w)}


def _input_gradient_batch(params: ClassifierParams, xs: np.ndarray,
                          target_class: int, cache=None) -> np.ndarray:
    """d logits[target] / d input for every image in the batch."""
    if cache is None:
        cache = _forward_batch(params, xs)
    b, h, w = cache["shape"]
    n = h * w
    g_feats = np.broadcast_to(params.head_w[target_class], (b, CONV2_FILTERS))
    g_pre2 = (g_feats[:, None, :] / n) * (cache["pre2"] > 0)
    g_p2 = g_pre2 @ _kernel_matrix(params.conv2_w).T
    g_a1 = _col2im(g_p2, h, w, CONV1_FILTERS).reshape(b, n, CONV1_FILTERS)
    g_pre1 = g_a1 * (cache["pre1"] > 0)
    g_p1 = g_pre1 @ _kernel_matrix(params.conv1_w).T
    return _col2im(g_p1, h, w, params.in_channels)


def _check_input(params: ClassifierParams, img) -> np.ndarray:
    img = as_image(img)
    if img.shape[2] != params.in_channels:
        raise ValueError(
            f"classifier expects {params.in_channels} channel(s), image has {img.shape[2]}")
    return img


def forward(params: ClassifierParams, img) -> np.ndarray:
    """Logits for one image."""
    img = _check_input(params, img)
    return _forward_batch(params, img[None])["logits"][0]


def predict(params: ClassifierParams, img) -> int:
    """Argmax class; ties break toward the lowest index."""
    return int(np.argmax(forward(params, img)))


def input_gradient(params: ClassifierParams, img, target_class: int) -> np.ndarray:
    """Exact reverse-mode gradient of logits[target_class] w.r.t. every pixel."""
    img = _check_input(params, img)
    if not 0 <= target_class < params.num_classes:
        raise ValueError(f"target_class {target_class} out of range")
    return _input_gradient_batch(params, img[None], target_class)[0]


def feature_map(params: ClassifierParams, img) -> np.ndarray:
    """Channel-mean of the second conv layer's post-ReLU activations.

    Min-max normalized to [0, 1]; a constant activation map comes back as
    all zeros. Same-padded convolutions already keep the input grid, so
    the resize is a no-op safeguard.
    """
    from .imagecore import resize_bilinear

    img = _check_input(params, img)
    cache = _forward_batch(params, img[None])
    h, w = img.shape[:2]
    fmap = cache["a2"][0].mean(axis=1).reshape(h, w)
    if fmap.shape != img.shape[:2]:
        fmap = resize_bilinear(fmap, img.shape[0], img.shape[1])
    span = fmap.max() - fmap.min()
    if span <= 0:
        return np.zeros_like(fmap)
    return (fmap - fmap.min()) / span


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _loss_and_param_grads(params: ClassifierParams, x: np.ndarray, label: int):
    """Softmax cross-entropy and its gradient for one sample."""
    cache = _forward_batch(params, x[None])
    logits = cache["logits"][0]
    shifted = logits - logits.max()
    logsumexp = np.log(np.sum(np.exp(shifted)))
    loss = logsumexp - shifted[label]
    probs = np.exp(shifted - logsumexp)

    b, h, w = cache["shape"]
    n = h * w
    g_logits = probs.copy()
    g_logits[label] -= 1.0

    g_head_w = np.outer(g_logits, cache["feats"][0])
    g_head_b = g_logits
    g_feats = params.head_w.T @ g_logits

    g_pre2 = (g_feats[None, None, :] / n) * (cache["pre2"] > 0)
    g_k2 = cache["p2"][0].T @ g_pre2[0]  # (72, 16)
    g_conv2_w = g_k2.reshape(KERNEL, KERNEL, CONV1_FILTERS, CONV2_FILTERS).transpose(3, 0, 1, 2)
    g_conv2_b = g_pre2[0].sum(axis=0)

    g_p2 = g_pre2 @ _kernel_matrix(params.conv2_w).T
    g_a1 = _col2im(g_p2, h, w, CONV1_FILTERS).reshape(1, n, CONV1_FILTERS)
    g_pre1 = g_a1 * (cache["pre1"] > 0)
    g_k1 = cache["p1"][0].T @ g_pre1[0]
    g_conv1_w = g_k1.reshape(KERNEL, KERNEL, params.in_channels, CONV1_FILTERS).transpose(3, 0, 1, 2)
    g_conv1_b = g_pre1[0].sum(axis=0)

    grads = (g_conv1_w, g_conv1_b, g_conv2_w, g_conv2_b, g_head_w, g_head_b)
    return float(loss), grads


def train(dataset: LabeledDataset, cfg: TrainConfig, loss_history: list | None = None) -> ClassifierParams:
    """SGD with momentum on softmax cross-entropy, fully seeded.

    The learning rate is multiplied by cfg.decay_factor every
    cfg.decay_every epochs; data order is reshuffled each epoch with the
    same generator that initialized the parameters, so identical seeds
    give bitwise-identical results. With freeze_backbone only the head
    receives updates.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(dataset.images[0].shape[2], dataset.num_classes, rng)
    velocity = [np.zeros_like(a) for a in params._arrays()]
    frozen = {0, 1, 2, 3} if cfg.freeze_backbone else set()

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.decay_factor ** (epoch // cfg.decay_every)
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for idx in order:
            loss, grads = _loss_and_param_grads(params, dataset.images[idx], int(dataset.labels[idx]))
            epoch_loss += loss
            arrays = params._arrays()
            for slot, (arr, grad) in enumerate(zip(arrays, grads)):
                if slot in frozen:
                    continue
                velocity[slot] = cfg.momentum * velocity[slot] + grad
                arr -= lr * velocity[slot]
        if loss_history is not None:
            loss_history.append(epoch_loss / len(dataset))
    return params


# ---------------------------------------------------------------------------
# Checkpoint I/O: magic, version, dims, optional normalization stats, then
# parameters as little-endian float64 in declaration order.
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ClassifierParams, stats: NormalizationStats | None = None) -> None:
    header = struct.pack(
        "<7sBIIIIIB",
        _CHECKPOINT_MAGIC, _CHECKPOINT_VERSION,
        params.in_channels, CONV1_FILTERS, CONV2_FILTERS, KERNEL,
        params.num_classes, 1 if stats is not None else 0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        if stats is not None:
            if stats.channels != params.in_channels:
                raise ValueError("stats channel count must match the classifier input")
            fh.write(stats.mean.astype("<f8").tobytes())
            fh.write(stats.std.astype("<f8").tobytes())
        for arr in params._arrays():
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (params, stats); stats is None when the file carries none."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header_size = struct.calcsize("<7sBIIIIIB")
    if len(blob) < header_size:
        raise ValueError("checkpoint file too short")
    magic, version, in_ch, n1, n2, k, n_classes, has_stats = struct.unpack(
        "<7sBIIIIIB", blob[:header_size])
    if magic != _CHECKPOINT_MAGIC:
        raise ValueError(f"not a classifier checkpoint (magic {magic!r})")
    if version != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if (n1, n2, k) != (CONV1_FILTERS, CONV2_FILTERS, KERNEL):
        raise ValueError("checkpoint architecture does not match this build")

    pos = header_size

    def take(*shape):
        nonlocal pos
        count = int(np.prod(shape))
        end = pos + 8 * count
        if end > len(blob):
            raise ValueError("checkpoint file truncated")
        arr = np.frombuffer(blob[pos:end], dtype="<f8").reshape(shape).copy()
        pos = end
        return arr

    stats = None
    if has_stats:
        stats = NormalizationStats(take(in_ch), take(in_ch))
    params = ClassifierParams(
        conv1_w=take(CONV1_FILTERS, KERNEL, KERNEL, in_ch),
        conv1_b=take(CONV1_FILTERS),
        conv2_w=take(CONV2_FILTERS, KERNEL, KERNEL, CONV1_FILTERS),
        conv2_b=take(CONV2_FILTERS),
        head_w=take(n_classes, CONV2_FILTERS),
        head_b=take(n_classes),
    )
    if pos != len(blob):
        raise ValueError("trailing bytes after checkpoint payload")
    return params, stats
