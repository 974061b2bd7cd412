"""Ensemble statistics, weight matrices, and the ETKF analysis machinery."""

from .ensemble import (
    Ensemble,
    correlation_matrix_factor,
    ensemble_moments,
    gradient_second_moment,
    sample_variance_diag,
)
from .filters import (
    AnalysisRecord,
    FilterRun,
    analysis_mean,
    etkf_transform,
    run_baseline_filter,
    run_weighted_filter,
)
from .weights import (
    ClusterPartition,
    FilterConfig,
    WeightMatrix,
    build_weight,
    cluster_partition,
    covariance_weight,
    detect_discontinuity,
    mask_correlations,
    toeplitz_band_mask,
)

__all__ = [
    "AnalysisRecord",
    "ClusterPartition",
    "Ensemble",
    "FilterConfig",
    "FilterRun",
    "WeightMatrix",
    "analysis_mean",
    "build_weight",
    "cluster_partition",
    "correlation_matrix_factor",
    "covariance_weight",
    "detect_discontinuity",
    "ensemble_moments",
    "etkf_transform",
    "gradient_second_moment",
    "mask_correlations",
    "run_baseline_filter",
    "run_weighted_filter",
    "sample_variance_diag",
    "toeplitz_band_mask",
]
