"""Consensus fusion of image segmentations."""

__version__ = "0.1.0"

from .core import ContingencyTable, PairCounts, Partition, build_contingency, pair_counts
from .exceptions import ComparabilityError, DegenerateMetricError, DegenerateRangeError, EmptyEnsembleError
from .fusion import FusionConfig, FusionReport, SegmentationFusion, best_of_k, delta_matrix, fuse, objective, select_move
from .metrics import (
    DistanceModel,
    adjusted_rand_index,
    average_sod,
    dl_distance,
    fit_qd,
    qd_distance,
    rand_index,
    sdd,
)
from .model_selection import GridResult, beta_index, estimate_beta, estimate_c, segmentation_index
from .protocol import evaluate
from .segmenters import KMeansConfig, KMeansSegmenter, MultibandImage, kmeans_segment, split_train_test

__all__ = [
    "ComparabilityError",
    "ContingencyTable",
    "DegenerateMetricError",
    "DegenerateRangeError",
    "DistanceModel",
    "EmptyEnsembleError",
    "FusionConfig",
    "FusionReport",
    "GridResult",
    "KMeansConfig",
    "KMeansSegmenter",
    "MultibandImage",
    "PairCounts",
    "Partition",
    "SegmentationFusion",
    "adjusted_rand_index",
    "average_sod",
    "best_of_k",
    "beta_index",
    "build_contingency",
    "delta_matrix",
    "dl_distance",
    "estimate_beta",
    "estimate_c",
    "evaluate",
    "fit_qd",
    "fuse",
    "kmeans_segment",
    "objective",
    "pair_counts",
    "qd_distance",
    "rand_index",
    "sdd",
    "segmentation_index",
    "select_move",
    "split_train_test",
]
