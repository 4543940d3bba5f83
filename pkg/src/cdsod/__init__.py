"""Outlier detection by consistent data selection.

A k-means ensemble scores how consistently each point is clustered, the
dataset is split at a score threshold, and a one-class model trained on the
consistent pool labels the rest.
"""

from cdsod.dataset import Dataset, generate_synthetic, group_outlier_classes, load_delimited
from cdsod.ensemble import ConsistencyScores, EnsembleConfig, avg_sim_score, cosine_similarity, score_ensemble
from cdsod.kmeans import ClusteringResult, assign_nearest, kmeans_fit
from cdsod.pipeline import PRESETS, ClassifierConfig, DetectionReport, evaluate_split, run_pipeline
from cdsod.pool_split import PoolSplit, bucket_histogram, split_pools

__version__ = "0.1.0"

__all__ = [
    "ClassifierConfig",
    "ClusteringResult",
    "ConsistencyScores",
    "Dataset",
    "DetectionReport",
    "EnsembleConfig",
    "PRESETS",
    "PoolSplit",
    "assign_nearest",
    "avg_sim_score",
    "bucket_histogram",
    "cosine_similarity",
    "evaluate_split",
    "generate_synthetic",
    "group_outlier_classes",
    "kmeans_fit",
    "load_delimited",
    "run_pipeline",
    "score_ensemble",
    "split_pools",
]
