"""Tempered (generalised) Laplace approximation for small neural networks."""

__version__ = "0.1.0"

from .curvature import (
    BlockDiagCurvature,
    DiagCurvature,
    EkfacCurvature,
    FullCurvature,
    KfacCurvature,
    TemperedHessian,
    ekfac_correct,
    estimate_fisher,
    frobenius_norm,
    kron_block_to_dense,
    temper,
)
from .datasets import Dataset, GeneratorSpec, generate, load_csv, write_csv
from .estimators import LaplaceMLPClassifier, LaplaceMLPRegressor
from .nn import MlpArchitecture, TrainConfig, forward, loss_and_gradient, per_sample_backprop, train_map
from .posterior import GlaPosterior, build, contraction_ratio, laplace_log_evidence, prior_only
from .predictive import entropy, evaluate, mc_predict

__all__ = [
    "BlockDiagCurvature",
    "Dataset",
    "DiagCurvature",
    "EkfacCurvature",
    "FullCurvature",
    "GeneratorSpec",
    "GlaPosterior",
    "KfacCurvature",
    "LaplaceMLPClassifier",
    "LaplaceMLPRegressor",
    "MlpArchitecture",
    "TemperedHessian",
    "TrainConfig",
    "build",
    "contraction_ratio",
    "ekfac_correct",
    "entropy",
    "estimate_fisher",
    "evaluate",
    "forward",
    "frobenius_norm",
    "generate",
    "kron_block_to_dense",
    "laplace_log_evidence",
    "load_csv",
    "loss_and_gradient",
    "mc_predict",
    "per_sample_backprop",
    "prior_only",
    "temper",
    "train_map",
    "write_csv",
]
