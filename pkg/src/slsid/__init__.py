"""Stochastic realization and identification of linear switched systems
with independent, identically distributed switching.

The pipeline: simulate (or load) a switched time series, estimate the
word-indexed output/input covariances, realize a minimal innovation-form
model from them by a switched Ho-Kalman step plus a per-mode gain/variance
fixed point, and validate through the one-step-ahead innovation predictor.
"""
from .algebra import (
    EMPTY_WORD,
    Selection,
    Word,
    WordIndexedMatrixTable,
    build_hankel,
    enumerate_words,
    matrix_product_along_word,
    required_words,
    word_probability,
)
from .covariance import (
    CovarianceTable,
    empirical_covariances,
    exact_covariances,
    least_squares_covariances,
    z_process,
)
from .errors import (
    DimensionError,
    IllConditionedRegressorError,
    InsufficientDataError,
    InvalidModeError,
    InvalidProbabilityError,
    MissingMarkovParameterError,
    ModelInvalidError,
    NoSelectionFoundError,
    NonConvergenceError,
    NotFullRankError,
    NotIsomorphicError,
    NumericalError,
    SingularHankelError,
    SlsidError,
    UndefinedBfrError,
)
from .identify import (
    ConsistencyResult,
    IdentConfig,
    ValidationReport,
    bfr,
    consistency_experiment,
    identify,
    predict,
    resolve_selections,
    validate_model,
)
from .model import (
    DeterministicModel,
    InnovationModel,
    SwitchedModel,
    find_isomorphism,
    markov_parameter,
    model_from_dict,
    reach_obs_ranks,
    stability_margin,
    transform_model,
)
from .realize import (
    associated_dlss,
    associated_slss,
    covariance_realization,
    ho_kalman,
    input_state_second_moment,
    iter_full_rank_selections,
    lambda_ydyd,
    psi_uy,
    search_selection,
    state_second_moment,
)
from .simulate import Dataset, SimConfig, load_series_csv, sample_switching, simulate

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # algebra
    "Word", "EMPTY_WORD", "Selection", "WordIndexedMatrixTable",
    "matrix_product_along_word", "word_probability", "enumerate_words",
    "required_words", "build_hankel",
    # model
    "DeterministicModel", "SwitchedModel", "InnovationModel",
    "model_from_dict", "markov_parameter", "stability_margin",
    "reach_obs_ranks", "transform_model", "find_isomorphism",
    # simulate
    "Dataset", "SimConfig", "simulate", "sample_switching", "load_series_csv",
    # covariance
    "CovarianceTable", "z_process", "empirical_covariances",
    "least_squares_covariances", "exact_covariances",
    # realize
    "state_second_moment", "input_state_second_moment", "ho_kalman",
    "associated_dlss", "associated_slss", "psi_uy", "lambda_ydyd",
    "covariance_realization", "search_selection", "iter_full_rank_selections",
    # identify
    "IdentConfig", "identify", "resolve_selections", "predict", "bfr",
    "ValidationReport", "validate_model", "consistency_experiment",
    "ConsistencyResult",
    # errors
    "SlsidError", "InvalidModeError", "InvalidProbabilityError",
    "DimensionError", "ModelInvalidError", "MissingMarkovParameterError",
    "InsufficientDataError", "UndefinedBfrError", "NumericalError",
    "SingularHankelError", "NonConvergenceError", "NotFullRankError",
    "IllConditionedRegressorError", "NoSelectionFoundError",
    "NotIsomorphicError",
]
