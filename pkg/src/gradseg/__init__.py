"""gradseg: binary segmentation masks derived from classifier attributions.

A small convolutional classifier is trained on image-level labels only;
integrated-gradients relevance maps of its predictions are refined into
masks by Otsu/morphology or normalized-cut partitioning, with optional
dense-CRF edge refinement.
"""

from .attribution import IgConfig, integrated_gradients, noise_tunnel, to_relevance_map
from .classifier import (ClassifierParams, LabeledDataset, TrainConfig, feature_map,
                         forward, input_gradient, load_checkpoint, predict,
                         save_checkpoint, train)
from .densecrf import CrfConfig, crf_refine, mean_field, unary_from_mask
from .estimators import AttributionSegmenter, ReferenceNetClassifier
from .evalharness import (SegMetrics, SynthConfig, dice, evaluate, generate_synthetic,
                          iou)
from .imagecore import (ImageFormatError, NormalizationStats, compute_stats,
                        equalize_histogram, load_image, load_mask, normalize,
                        save_image, save_mask, to_grayscale)
from .ncut import (NcutConfig, PixelAffinityGraph, build_graph, ncut_segment,
                   ncut_value, spectral_bipartition)
from .pipeline import (VARIANT_A, VARIANT_B, VARIANT_C, VARIANT_XNCUT, PipelineConfig,
                       PipelineResult, VariantId, fuse, parse_variant, run_corpus,
                       run_image)
from .postprocess import (CROSS_3X3, DegenerateMapError, DegenerateMapWarning,
                          MorphConfig, StructuringElement, connected_components,
                          dilate, erode, fill_holes, morphology_pipeline,
                          otsu_threshold, remove_border_and_small, threshold_mask)

__version__ = "0.1.0"
