"""Dual-ensemble reconstruction anomaly detection (library and CLI)."""

from .backbones import (
    BackboneConfig,
    BackboneNet,
    build_backbone,
    forward_ae,
    forward_aeu,
    load_checkpoint,
    loss_aeu,
    loss_mse,
    save_checkpoint,
)
from .data import DatasetSpec, generate_synthetic, ingest_directory
from .evaluation import EvalReport, auc, evaluate_modules, histogram, run_ar_sweep
from .gradcheck import GradCheckReport, grad_check
from .scoring import (
    AnomalyMap,
    EnsembleOutputs,
    ensemble_outputs,
    image_score,
    refine_with_uncertainty,
    score_inter,
    score_intra,
    score_rec,
)
from .tensor import Tensor, no_grad
from .trainer import AdamState, EnsembleModule, TrainConfig, adam_step, train_dual_ensembles, train_network

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AnomalyMap", "BackboneConfig", "BackboneNet", "DatasetSpec",
    "EnsembleModule", "EnsembleOutputs", "EvalReport", "GradCheckReport",
    "Tensor", "TrainConfig", "adam_step", "auc", "build_backbone",
    "ensemble_outputs", "evaluate_modules", "forward_ae", "forward_aeu",
    "generate_synthetic", "grad_check", "histogram", "image_score",
    "ingest_directory", "load_checkpoint", "loss_aeu", "loss_mse", "no_grad",
    "refine_with_uncertainty", "run_ar_sweep", "save_checkpoint",
    "score_inter", "score_intra", "score_rec", "train_dual_ensembles",
    "train_network",
]
