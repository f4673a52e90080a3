"""Frequency-aware graph signal processing for implicit-feedback recommendation."""
from .sparse import (
    InteractionMatrix,
    NormalizedMatrix,
    EnhancedMatrix,
    ParameterError,
    build_interaction_matrix,
    normalize,
    column_quantile,
)
from .spectral import (
    BasisCache,
    ConvergenceError,
    SpectralBasis,
    truncated_svd_bottom,
    truncated_svd_top,
)
from .filters import (
    FilterConfig,
    FrequencyAwareModel,
    cascaded_predict,
    gfcf_predict,
    parallel_predict,
    pgsp_predict,
    predict,
    smoothness,
)
from .data import DataError, RatingRecord, load_records, split
from .evaluation import MetricReport, evaluate_scores, kl_consistency, metrics, rank_topk
from .experiment import ExperimentConfig, SweepGrid

__version__ = "0.1.0"
