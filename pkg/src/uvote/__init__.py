"""Uncertainty-voting ensemble for imbalanced regression."""

from .data import Dataset, SplitDataset, SyntheticSpec, generate_synthetic, load_csv
from .density import expert_weights, histogram_density, kde_density
from .evaluate import aggregate, evaluate_model, mae, pearson_pct, rmse, shot_partition, uce
from .experiment import ExperimentConfig, run_experiment
from .model import ArchitectureSpec, ExpertOutput, UvoteModel, build_model
from .training import TrainConfig, dynamic_alpha, laplace_nll, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "Dataset",
    "ExperimentConfig",
    "ExpertOutput",
    "SplitDataset",
    "SyntheticSpec",
    "TrainConfig",
    "UvoteModel",
    "aggregate",
    "build_model",
    "dynamic_alpha",
    "evaluate_model",
    "expert_weights",
    "generate_synthetic",
    "histogram_density",
    "kde_density",
    "laplace_nll",
    "load_csv",
    "mae",
    "pearson_pct",
    "rmse",
    "run_experiment",
    "shot_partition",
    "train",
    "uce",
]
