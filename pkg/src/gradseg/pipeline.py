"""Orchestration of the mask-derivation pipeline and its four variants.

Stage order per image: normalize -> predict -> noise-tunnel attribution of
the predicted class -> relevance map -> optional fusion with the network's
feature map -> morphology or normalized-cut post-processing -> optional
dense-CRF refinement against the original (unnormalized) image. The four
(explanation, postproc) combinations mirror the published ablation grid:
A = fusion+morphology, B = fusion+ncut, C = attribution-only+morphology,
and "xncut" = attribution-only+ncut.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import attribution, classifier, densecrf, ncut, postprocess
from .imagecore import NormalizationStats, as_image, identity_stats, normalize

logger = logging.getLogger(__name__)


class Explanation(enum.Enum):
    XAI_ONLY = "xai_only"
    FUSION = "fusion"


class PostProc(enum.Enum):
    MORPHOLOGY = "morphology"
    NCUT = "ncut"


@dataclass(frozen=True)
class VariantId:
    explanation: Explanation
    postproc: PostProc
    crf: bool = False

    def with_crf(self, crf: bool) -> "VariantId":
        return dataclasses.replace(self, crf=crf)


VARIANT_A = VariantId(Explanation.FUSION, PostProc.MORPHOLOGY)
VARIANT_B = VariantId(Explanation.FUSION, PostProc.NCUT)
VARIANT_C = VariantId(Explanation.XAI_ONLY, PostProc.MORPHOLOGY)
VARIANT_XNCUT = VariantId(Explanation.XAI_ONLY, PostProc.NCUT)

_VARIANT_NAMES = {"a": VARIANT_A, "b": VARIANT_B, "c": VARIANT_C, "xncut": VARIANT_XNCUT}


def parse_variant(name: str, crf: bool = False) -> VariantId:
    """Map a CLI variant name (a | b | c | xncut) to its stage combination."""
    try:
        return _VARIANT_NAMES[name.lower()].with_crf(crf)
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; expected a, b, c, or xncut") from None


@dataclass
class PipelineConfig:
    variant: VariantId = VARIANT_XNCUT
    stats: NormalizationStats = field(default_factory=lambda: identity_stats(1))
    ig: attribution.IgConfig = field(default_factory=attribution.IgConfig)
    morph: postprocess.MorphConfig = field(default_factory=postprocess.MorphConfig)
    ncut: ncut.NcutConfig = field(default_factory=ncut.NcutConfig)
    crf: densecrf.CrfConfig = field(default_factory=densecrf.CrfConfig)


@dataclass
class PipelineResult:
    """Per-image record; mask is the final output, pre_crf_mask the stage before CRF."""

    label: int
    mask: np.ndarray
    relevance: np.ndarray
    pre_crf_mask: np.ndarray
    stages: tuple = ()
    warnings: tuple = ()
    error: str | None = None


def fuse(relevance, feature) -> np.ndarray:
    """Elementwise product of two maps, min-max renormalized to [0, 1].

    The feature map acts as a multiplicative weight that suppresses
    attribution outliers; a constant product degenerates to all zeros.
    """
    rel = postprocess._check_map(relevance)
    feat = postprocess._check_map(feature)
    if rel.shape != feat.shape:
        raise ValueError(f"shape mismatch: {rel.shape} vs {feat.shape}")
    prod = rel * feat
    span = prod.max() - prod.min()
    if span <= 0:
        return np.zeros_like(prod)
    return (prod - prod.min()) / span


def run_image_result(params, img, cfg: PipelineConfig) -> PipelineResult:
    """Full pipeline for one image, keeping intermediates and stage traces."""
    img = as_image(img)
    stages = []
    captured = []

    def stage(name, fn):
        start = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            out = fn()
        for item in caught:
            captured.append(f"{name}: {item.message}")
        stages.append(name)
        shape = getattr(out, "shape", None)
        logger.debug("stage %-12s out_shape=%s %.1f ms", name, shape,
                     1e3 * (time.perf_counter() - start))
        return out

    normalized = stage("normalize", lambda: normalize(img, cfg.stats))
    label = stage("predict", lambda: classifier.predict(params, normalized))
    attr = stage("attribution", lambda: attribution.noise_tunnel(
        params, normalized, label, cfg.ig))
    relevance = stage("relevance", lambda: attribution.to_relevance_map(attr))
    if cfg.variant.explanation is Explanation.FUSION:
        feature = stage("feature_map", lambda: classifier.feature_map(params, normalized))
        relevance = stage("fuse", lambda: fuse(relevance, feature))
    if cfg.variant.postproc is PostProc.MORPHOLOGY:
        mask = stage("morphology", lambda: postprocess.morphology_pipeline(relevance, cfg.morph))
    else:
        mask = stage("ncut", lambda: ncut.ncut_segment(relevance, cfg.ncut))
    pre_crf = mask
    if cfg.variant.crf:
        # refinement looks at the original pixel values, not the normalized ones
        mask = stage("crf", lambda: densecrf.crf_refine(img, pre_crf, relevance, cfg.crf))
    return PipelineResult(label=label, mask=mask, relevance=relevance,
                          pre_crf_mask=pre_crf, stages=tuple(stages),
                          warnings=tuple(captured))


def run_image(params, img, cfg: PipelineConfig):
    """Predicted class and final binary mask for one image."""
    result = run_image_result(params, img, cfg)
    return result.label, result.mask


def derive_seed(seed: int, index: int) -> int:
    """Stable per-image attribution seed from (global seed, image index)."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def run_corpus(params, images, cfg: PipelineConfig) -> list:
    """Per-image pipeline over a corpus, order preserved.

    Each image gets an attribution seed derived from (cfg.ig.seed, index)
    so results do not depend on corpus size or processing order. Failures
    are recorded on the result instead of aborting the run.
    """
    if len(images) == 0:
        raise ValueError("corpus is empty")
    results = []
    for index, img in enumerate(images):
        img_cfg = dataclasses.replace(
            cfg, ig=dataclasses.replace(cfg.ig, seed=derive_seed(cfg.ig.seed, index)))
        try:
            results.append(run_image_result(params, img, img_cfg))
        except Exception as exc:  # per-image failures are data, not fatal
            logger.warning("image %d failed: %s", index, exc)
            empty = np.zeros(np.asarray(img).shape[:2], dtype=np.uint8)
            results.append(PipelineResult(
                label=-1, mask=empty, relevance=empty.astype(np.float64),
                pre_crf_mask=empty, error=f"{type(exc).__name__}: {exc}"))
    return results
