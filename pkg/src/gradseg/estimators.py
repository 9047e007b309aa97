"""scikit-learn style estimators wrapping the functional pipeline.

``ReferenceNetClassifier`` is a plain fit/predict classifier over images;
``AttributionSegmenter`` fits the same classifier and then derives binary
masks from its gradient attributions (predict), exposing the intermediate
relevance maps through transform. Both follow sklearn conventions:
constructor arguments are stored verbatim, fitted state ends in a trailing
underscore, and get_params/set_params come from BaseEstimator.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import attribution, classifier, pipeline
from .densecrf import CrfConfig
from .imagecore import compute_stats, identity_stats, normalize
from .ncut import NcutConfig
from .postprocess import MorphConfig
from .validation import check_image_batch, check_labels, stack_masks


class ReferenceNetClassifier(ClassifierMixin, BaseEstimator):
    """Small convolutional image classifier trained with momentum SGD."""

    def __init__(self, epochs=100, learning_rate=0.005, momentum=0.9,
                 decay_factor=0.1, decay_every=50, freeze_backbone=False,
                 normalize_inputs=True, seed=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.freeze_backbone = freeze_backbone
        self.normalize_inputs = normalize_inputs
        self.seed = seed

    def _train_config(self):
        return classifier.TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate,
            momentum=self.momentum, decay_factor=self.decay_factor,
            decay_every=self.decay_every, seed=self.seed,
            freeze_backbone=self.freeze_backbone)

    def fit(self, X, y):
        images = check_image_batch(X)
        labels = check_labels(y, len(images))
        self.classes_, encoded = np.unique(labels, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        self.stats_ = compute_stats(images) if self.normalize_inputs \
            else identity_stats(images[0].shape[2])
        normalized = [normalize(im, self.stats_) for im in images]
        dataset = classifier.LabeledDataset(normalized, encoded, int(self.classes_.size))
        self.params_ = classifier.train(dataset, self._train_config())
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        images = check_image_batch(X)
        return np.stack([classifier.forward(self.params_, normalize(im, self.stats_))
                         for im in images])

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class AttributionSegmenter(TransformerMixin, BaseEstimator):
    """Image -> binary mask via classifier attributions.

    fit(X, y) trains the underlying classifier on class labels only (no
    ground-truth masks are involved); predict(X) returns stacked (n, H, W)
    masks; transform(X) returns the stacked relevance maps feeding the
    mask stage. Advanced stage parameters can be overridden by passing
    config objects (MorphConfig / NcutConfig / CrfConfig).
    """

    def __init__(self, variant="xncut", crf=False, epochs=100, learning_rate=0.005,
                 momentum=0.9, decay_factor=0.1, decay_every=50,
                 freeze_backbone=False, ig_steps=50, nt_samples=5, nt_sigma=None,
                 morph_config=None, ncut_config=None, crf_config=None, seed=0):
        self.variant = variant
        self.crf = crf
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.freeze_backbone = freeze_backbone
        self.ig_steps = ig_steps
        self.nt_samples = nt_samples
        self.nt_sigma = nt_sigma
        self.morph_config = morph_config
        self.ncut_config = ncut_config
        self.crf_config = crf_config
        self.seed = seed

    def fit(self, X, y):
        images = check_image_batch(X)
        labels = check_labels(y, len(images))
        self.classes_, encoded = np.unique(labels, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        self.stats_ = compute_stats(images)
        normalized = [normalize(im, self.stats_) for im in images]
        dataset = classifier.LabeledDataset(normalized, encoded, int(self.classes_.size))
        cfg = classifier.TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate,
            momentum=self.momentum, decay_factor=self.decay_factor,
            decay_every=self.decay_every, seed=self.seed,
            freeze_backbone=self.freeze_backbone)
        self.params_ = classifier.train(dataset, cfg)
        return self

    def pipeline_config(self) -> pipeline.PipelineConfig:
        check_is_fitted(self, "params_")
        return pipeline.PipelineConfig(
            variant=pipeline.parse_variant(self.variant, crf=self.crf),
            stats=self.stats_,
            ig=attribution.IgConfig(steps=self.ig_steps, nt_samples=self.nt_samples,
                                    nt_sigma=self.nt_sigma, seed=self.seed),
            morph=self.morph_config if self.morph_config is not None else MorphConfig(),
            ncut=self.ncut_config if self.ncut_config is not None else NcutConfig(),
            crf=self.crf_config if self.crf_config is not None else CrfConfig(),
        )

    def _run(self, X) -> list:
        images = check_image_batch(X)
        return pipeline.run_corpus(self.params_, images, self.pipeline_config())

    def predict(self, X) -> np.ndarray:
        """Stacked (n, H, W) binary masks."""
        return stack_masks([r.mask for r in self._run(X)])

    def predict_classes(self, X) -> np.ndarray:
        """Class labels the masks were derived from."""
        results = self._run(X)
        return np.asarray([self.classes_[r.label] if r.label >= 0 else -1 for r in results])

    def transform(self, X) -> np.ndarray:
        """Stacked (n, H, W) relevance maps (the mask stage's input)."""
        return np.stack([r.relevance for r in self._run(X)])

    def segment_detailed(self, X) -> list:
        """Full per-image records (mask, relevance, stage trace, warnings)."""
        return self._run(X)
