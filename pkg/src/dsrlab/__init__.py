"""Disentangled semantic representation learning for unsupervised domain adaptation."""

from .autodiff import Tensor, Tape, backward, grad_reverse, no_grad
from .data import Dataset, GenSpec, TrainingView, batches, generate, load_features, save_features
from .evaluate import ProbeResult, accuracy, export_embedding, predict, probe, run_probes
from .losses import LossBreakdown, cross_entropy, entropy, kl_std_normal, recon_nll, total_loss
from .model import DsrModel, LatentSample, ModelDims
from .trainer import MetricsRecord, TrainConfig, lambda_at, train, train_ablation

__version__ = "0.1.0"
