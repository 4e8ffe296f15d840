"""coVariance neural networks: covariance filters, VNN training, graphon
transferability experiments and an interpretable brain-age pipeline."""

from .cohort import CohortTable
from .covariance import (CovarianceModel, FeatureMatrix, estimate_sample_covariance, inverse_vft,
                         normalize_spectrum, vft)
from .errors import VnnError
from .filters import apply_filter, frequency_response, operator_norm, pca_recovery_bank
from .graphon import (GraphonSpec, IntervalPartition, StepFunction, cut_distance_overlay, cut_norm_distance,
                      dominance_check, get_graphon, graphon_approximation, interval_partition,
                      sample_covariance_from_graphon, step_function_l2_distance)
from .model import (VnnArchitecture, VnnParameters, deserialize, forward, forward_batch, init_parameters,
                    parameter_count, readout_mean, regional_contributions, serialize)
from .rng import make_rng
from .training import TrainConfig, TrainedEnsemble, train_ensemble, train_model

__version__ = "0.1.0"

__all__ = [
    "CohortTable", "CovarianceModel", "FeatureMatrix", "GraphonSpec", "IntervalPartition", "StepFunction",
    "TrainConfig", "TrainedEnsemble", "VnnArchitecture", "VnnError", "VnnParameters", "apply_filter",
    "cut_distance_overlay", "cut_norm_distance", "deserialize", "dominance_check", "estimate_sample_covariance",
    "forward", "forward_batch", "frequency_response", "get_graphon", "graphon_approximation", "init_parameters",
    "interval_partition", "inverse_vft", "make_rng", "normalize_spectrum", "operator_norm", "parameter_count",
    "pca_recovery_bank", "readout_mean", "regional_contributions", "sample_covariance_from_graphon", "serialize",
    "step_function_l2_distance", "train_ensemble", "train_model", "vft",
]
