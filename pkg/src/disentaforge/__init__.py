"""Blended-identity disentanglement deepfake detector, synthetic forgery
corpus generator, and evaluation harness."""

__version__ = "0.1.0"

from .datagen import (CorpusManifest, ForgeryRecord, GeneratorConfig, IdentitySpec,
                      forge, generate_corpus, load_manifest, render_identity)
from .iacc import GaussianStats, InfoLossTerms, gaussian_stats, info_loss, kl_diag_gauss, purify
from .losses import LossBreakdown, LossWeights, TrainingFault, bce_loss, \
    reconstruction_loss, separation_contrastive_loss, total_loss
from .nets import ABLATIONS, DisentangleNet, DisentangledBundle, ModelConfig, aggregate
from .training import TrainConfig, TrainState, load_checkpoint, run_training, \
    sample_pairs, save_checkpoint, train_step
from .evaluation import EvalReport, evaluate, export_embeddings, roc_auc, \
    run_ablation_matrix, video_auc

__all__ = [
    "ABLATIONS", "CorpusManifest", "DisentangleNet", "DisentangledBundle",
    "EvalReport", "ForgeryRecord", "GaussianStats", "GeneratorConfig",
    "IdentitySpec", "InfoLossTerms", "LossBreakdown", "LossWeights",
    "ModelConfig", "TrainConfig", "TrainState", "TrainingFault", "aggregate",
    "bce_loss", "evaluate", "export_embeddings", "forge", "gaussian_stats",
    "generate_corpus", "info_loss", "kl_diag_gauss", "load_checkpoint",
    "load_manifest", "purify", "reconstruction_loss", "render_identity",
    "roc_auc", "run_ablation_matrix", "run_training", "sample_pairs",
    "save_checkpoint", "separation_contrastive_loss", "total_loss",
    "train_step", "video_auc",
]
