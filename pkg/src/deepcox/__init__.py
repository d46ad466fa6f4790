"""Deep Cox regression with subsample ensembles and infinitesimal-jackknife inference."""

from .baselines import fit_linear_cox, linear_cox_derivatives
from .coxloss import brute_force_likelihood, neg_log_partial_likelihood, partial_likelihood_score
from .data import (
    SimulationSpec,
    SurvivalDataset,
    calibrate_censoring_rate,
    generate_case,
    load_dataset,
    save_dataset,
    true_risk,
)
from .ensemble import (
    EnsembleModel,
    InclusionMatrix,
    contrast_estimate,
    draw_subsamples,
    ensemble_predict,
    fit_ensemble,
    load_model,
    save_model,
    subsample_size,
)
from .errors import (
    CalibrationError,
    ConvergenceError,
    DeepCoxError,
    DegenerateDataError,
    DegenerateDesignError,
    DegenerateLikelihoodError,
    InsufficientReplicationsError,
    InvalidArgumentError,
    ParseError,
    SeparationError,
    TrainingDivergedError,
    UndefinedMetricError,
    ValidationError,
)
from .inference import (
    AlphaRange,
    InferenceResult,
    RateParams,
    alpha_range,
    contrast_variance,
    ij_cross_covariance,
    ij_pointwise_variance,
    normal_quantile,
    relative_risk_interval,
    single_overlap_cov_mc,
    wald_interval,
)
from .metrics import MetricsRow, concordance_index, evaluate_pointwise
from .net import NetworkConfig, NetworkParams, backward, forward_raw, init_network, predict_g
from .study import StudyConfig, run_monte_carlo
from .trainer import TrainConfig, train, train_traced, training_budget_check

__version__ = "0.1.0"
