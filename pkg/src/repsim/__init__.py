"""Null-calibrated representational similarity.

Raw similarity scores between embedding matrices drift upward with width and,
after max-over-layers selection, with depth. This package turns them into
permutation-calibrated effect sizes with valid p-values.
"""
__version__ = "0.1.0"

from .core import (
    DegenerateInputError,
    PermutationPlan,
    apply_permutation,
    as_embedding,
    as_stack,
    center,
    derive_seed,
    inverse_permutation,
    permutation,
)
from .metrics import (
    METRIC_NAMES,
    MetricSpec,
    canonical_correlations,
    cca_similarity,
    cka,
    cknna,
    cycle_knn,
    gram,
    hsic_unbiased,
    knn_sets,
    mutual_knn,
    procrustes_similarity,
    rdm,
    rsa,
    rv_coefficient,
    similarity,
)
from .calibration import (
    AggregateCalibrationResult,
    CalibrationResult,
    aggregate,
    calibrate_aggregate,
    calibrate_scalar,
    calibrated_score,
    critical_value,
    entrywise_calibrated,
    layer_similarity_matrix,
    multiplicity_adjust,
    null_similarity_matrices,
    p_value,
)
from .io import RunReport, load_matrix, load_stack, save_matrix
