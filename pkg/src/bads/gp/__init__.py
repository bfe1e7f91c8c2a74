from .hyper import (
    HyperPrior,
    build_hyperprior,
    fit_map,
    initial_hyperparameters,
    log_map_objective,
    log_marginal_likelihood,
)
from .kernels import Hyperparameters, KernelSpec, kernel_eval, kernel_matrix, radius
from .posterior import (
    FactorizationFailure,
    TrainingSet,
    build_training_set,
    posterior_moments,
    rank_one_update,
)
from .training import residual_normality_check, residual_z, select_training_set

__all__ = [
    "FactorizationFailure",
    "HyperPrior",
    "Hyperparameters",
    "KernelSpec",
    "TrainingSet",
    "build_hyperprior",
    "build_training_set",
    "fit_map",
    "initial_hyperparameters",
    "kernel_eval",
    "kernel_matrix",
    "log_map_objective",
    "log_marginal_likelihood",
    "posterior_moments",
    "radius",
    "rank_one_update",
    "residual_normality_check",
    "residual_z",
    "select_training_set",
]
