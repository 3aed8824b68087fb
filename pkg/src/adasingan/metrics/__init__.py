"""Evaluation metrics: RMSE, SIFID and NIQE."""
from .basic import rmse
from .extractors import (WEIGHTS_ENV, FeatureExtractor, InceptionPoolExtractor,
                         RandomConvExtractor, default_extractor)
from .niqe import NSSModel, niqe
from .sifid import feature_stats, frechet_distance, sifid, sifid_from_features
from .table import evaluate_table, format_report

__all__ = [
    "rmse", "sifid", "sifid_from_features", "frechet_distance", "feature_stats", "niqe",
    "NSSModel", "FeatureExtractor", "RandomConvExtractor", "InceptionPoolExtractor",
    "default_extractor", "WEIGHTS_ENV", "evaluate_table", "format_report",
]
