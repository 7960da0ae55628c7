"""Few-shot classification of small tables rendered as rank-aligned images."""

from .backbone import BackboneSpec, ConvBackbone, build_backbone, embed, param_count
from .data import Dataset, FeatureKind, FeatureSpec, encode_labels, impute, load_csv, normalize, split
from .fewshot import (
    AdaptedHeadClassifier,
    EpisodeSpec,
    EvalReport,
    ImagePool,
    PrototypeClassifier,
    evaluate,
    meta_train,
    sample_episode,
)
from .metrics import accuracy, auc_binary, auc_macro_ovr, domain_coverage, project_2d
from .transform import FeatureLayout, GridSpec, TabularImageTransformer, choose_grid, fit_layout

__version__ = "0.1.0"

__all__ = [
    "AdaptedHeadClassifier", "BackboneSpec", "ConvBackbone", "Dataset", "EpisodeSpec", "EvalReport",
    "FeatureKind", "FeatureLayout", "FeatureSpec", "GridSpec", "ImagePool", "PrototypeClassifier",
    "TabularImageTransformer", "accuracy", "auc_binary", "auc_macro_ovr", "build_backbone",
    "choose_grid", "domain_coverage", "embed", "encode_labels", "evaluate", "fit_layout", "impute",
    "load_csv", "meta_train", "normalize", "param_count", "project_2d", "sample_episode", "split",
]
