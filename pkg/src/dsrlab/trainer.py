"""Training loop for DSR, its no-domain-module ablation, and two baselines.

All modes minimize one scalar per batch and take one optimizer step over all
parameters. The encoders' adversarial ascent comes from the gradient-reversal
layers, so no alternating phases are needed.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .data import TrainingView, batches
from .errors import ConfigError, NumericError
from .evaluate import accuracy
from .losses import (LossBreakdown, cross_entropy, kl_std_normal, l_dom, l_sem,
                     recon_nll, total_loss)
from .model import GROUPS, DsrModel, ModelDims
from .nn import load_checkpoint, make_optimizer, save_checkpoint
from .seeding import rng_for

log = logging.getLogger(__name__)

MODES = ("dsr", "dsr_no_domain_module", "source_only", "dann_baseline")
ADVERSARY_INPUTS = ("sample", "mean")
CHECKPOINT_NAME = "checkpoint.dsr"


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    delta: float = 1.0
    omega: float = 0.1
    beta: float = 1.0
    gamma: float = 1.0
    lambda_max: float = 1.0
    lambda_sem_max: Optional[float] = None
    lambda_dom_max: Optional[float] = None
    ramp: float = 10.0
    k_y: int = 8
    k_d: int = 8
    feature_dim: int = 64
    encoder_hidden: tuple = (64,)
    decoder_hidden: tuple = (64,)
    head_hidden: tuple = ()
    adversary_hidden: Optional[tuple] = None
    adversary_input: str = "sample"
    seed: int = 0
    mode: str = "dsr"
    eq6_literal_sign: bool = False
    freeze_backbone: bool = False
    checkpoint_every: int = 0
    divergence_threshold: float = 1e6

    def __post_init__(self):
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)
        self.head_hidden = tuple(self.head_hidden)
        if self.adversary_hidden is not None:
            self.adversary_hidden = tuple(self.adversary_hidden)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        for name in ("epochs", "batch_size", "k_y", "k_d", "feature_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name}: must be a positive integer, got {v!r}")
        if self.adversary_input not in ADVERSARY_INPUTS:
            raise ConfigError(f"adversary_input: expected one of {ADVERSARY_INPUTS}, "
                              f"got {self.adversary_input!r}")
        if self.batch_size % 2:
            raise ConfigError(f"batch_size: must be even, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr: must be positive, got {self.lr}")
        if self.optimizer not in ("adam", "sgd", "sgd-momentum"):
            raise ConfigError(f"optimizer: unknown kind {self.optimizer!r}")
        for name in ("delta", "omega", "beta", "gamma", "lambda_max", "ramp"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name}: must be a finite non-negative number, got {v!r}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every: must be >= 0")

    @property
    def lambda_sem(self) -> float:
        return self.lambda_max if self.lambda_sem_max is None else self.lambda_sem_max

    @property
    def lambda_dom(self) -> float:
        return self.lambda_max if self.lambda_dom_max is None else self.lambda_dom_max

    def model_dims(self, in_dim: int, n_classes: int) -> ModelDims:
        return ModelDims(in_dim=in_dim, n_classes=n_classes, feature_dim=self.feature_dim,
                         k_y=self.k_y, k_d=self.k_d, encoder_hidden=self.encoder_hidden,
                         decoder_hidden=self.decoder_hidden, head_hidden=self.head_hidden,
                         adversary_hidden=self.adversary_hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        d["head_hidden"] = list(self.head_hidden)
        if self.adversary_hidden is not None:
            d["adversary_hidden"] = list(self.adversary_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class MetricsRecord:
    epoch: int
    losses: dict
    source_accuracy: float
    target_accuracy: Optional[float]
    lambda_sem: float
    lambda_dom: float
    # wall clock is not reproducible: excluded from equality and from metrics.jsonl
    seconds: float = field(default=0.0, compare=False)

    def to_json(self) -> str:
        d = {"kind": "epoch", "epoch": self.epoch, **self.losses,
             "source_accuracy": self.source_accuracy, "target_accuracy": self.target_accuracy,
             "lambda_sem": self.lambda_sem, "lambda_dom": self.lambda_dom}
        return json.dumps(d)


@dataclass
class TrainResult:
    model: DsrModel
    history: list
    checkpoint: Optional[Path] = None

    def __iter__(self):
        return iter((self.model, self.history))


def lambda_at(progress: float, lambda_max: float = 1.0, ramp: float = 10.0) -> float:
    """Adversarial weight ramp ``2 lmax / (1 + exp(-ramp p)) - lmax``, from 0 toward lmax."""
    p = min(max(float(progress), 0.0), 1.0)
    return 2.0 * lambda_max / (1.0 + math.exp(-ramp * p)) - lambda_max


# -- per-batch objectives ------------------------------------------------


def dsr_objective(model: DsrModel, x, source_y, domain, n_source: int, cfg: TrainConfig,
                  lambda_sem: float, lambda_dom: float, rng=None, eps=None,
                  gamma: float | None = None):
    """Total DSR loss on one mixed batch (first ``n_source`` rows are source).

    ``eps=(eps_y, eps_d)`` fixes the reparameterization noise; otherwise it is
    drawn from ``rng``.
    """
    eps_y, eps_d = eps if eps is not None else (None, None)
    lat = model.encode(x, rng=rng, eps_y=eps_y, eps_d=eps_d)
    x_hat = model.decode(lat.z_y, lat.z_d)
    if cfg.adversary_input == "mean":
        out = model.heads(lat.z_y, lat.z_d, lambda_sem, lambda_dom, lat.mu_y, lat.mu_d)
    else:
        out = model.heads(lat.z_y, lat.z_d, lambda_sem, lambda_dom)
    parts = {
        "kl_y": kl_std_normal(lat.mu_y, lat.logvar_y),
        "kl_d": kl_std_normal(lat.mu_d, lat.logvar_d),
        "recon": recon_nll(lat.features, x_hat),
    }
    parts.update(l_sem(ad.slice_rows(out["p_y_sem"], 0, n_source), source_y,
                       out["p_d_sem"], domain, cfg.delta))
    parts.update(l_dom(out["p_d_dom"], domain, out["p_y_dom"], cfg.omega,
                       literal_sign=cfg.eq6_literal_sign))
    return total_loss(parts, cfg.beta, cfg.gamma if gamma is None else gamma)


def source_only_objective(model: DsrModel, x, source_y, n_source: int, cfg: TrainConfig):
    mu_y, _ = model.encode_means(ad.as_tensor(x[:n_source]))
    ce = cross_entropy(model.Cy_sem(mu_y), source_y)
    return total_loss({"l_y": ce, "l_sem": ad.scale(ce, cfg.delta)}, beta=1.0, gamma=0.0)


def dann_objective(model: DsrModel, x, source_y, domain, n_source: int, cfg: TrainConfig,
                   lambda_sem: float):
    mu_y, _ = model.encode_means(x)
    ce_y = cross_entropy(model.Cy_sem(ad.slice_rows(mu_y, 0, n_source)), source_y)
    ce_d = cross_entropy(model.Cd_sem(ad.grad_reverse(mu_y, lambda_sem)), domain)
    l = ad.add(ad.scale(ce_y, cfg.delta), ce_d)
    return total_loss({"l_y": ce_y, "l_d_sem": ce_d, "l_sem": l, "elbo_neg": ad.Tensor(0.0)},
                      beta=1.0, gamma=0.0)


# -- loop ----------------------------------------------------------------


def _trainable(model: DsrModel, cfg: TrainConfig):
    skip = ("G.",) if cfg.freeze_backbone else ()
    return {k: v for k, v in model.params.items() if not k.startswith(skip)}


def _write_checkpoint(model: DsrModel, out_dir: Optional[Path]) -> Optional[Path]:
    if out_dir is None:
        return None
    return save_checkpoint(out_dir / CHECKPOINT_NAME, model.params.arrays())


def _fit(cfg: TrainConfig, view: TrainingView, model: DsrModel, monitor, out_dir,
         gamma: float, mode: str, start_progress: float = 0.0) -> TrainResult:
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")
        timing_fh = open(out_dir / "timing.jsonl", "w", encoding="utf-8")
    else:
        metrics_fh = timing_fh = None
    opt = make_optimizer(cfg.optimizer, _trainable(model, cfg), cfg.lr)
    batch_rng = rng_for(cfg.seed, "batches")
    eps_rng = rng_for(cfg.seed, "eps")
    half = cfg.batch_size // 2
    per_epoch = min(len(view.source_x), len(view.target_x)) // half
    if per_epoch == 0:
        raise ConfigError(f"batch_size: {cfg.batch_size} exceeds available samples")
    total_steps = cfg.epochs * per_epoch
    step = 0
    last_good = None
    history = []
    lam_sem = lam_dom = 0.0
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            sums: dict[str, float] = {}
            n_batches = 0
            for b in batches(view, cfg.batch_size, batch_rng):
                progress = start_progress + (1.0 - start_progress) * step / total_steps
                lam_sem = lambda_at(progress, cfg.lambda_sem, cfg.ramp)
                lam_dom = lambda_at(progress, cfg.lambda_dom, cfg.ramp)
                try:
                    with ad.Tape():
                        if mode == "source_only":
                            loss, br = source_only_objective(model, b.x, b.source_y, b.n_source,
                                                                 cfg)
                        elif mode == "dann_baseline":
                            loss, br = dann_objective(model, b.x, b.source_y, b.domain,
                                                      b.n_source, cfg, lam_sem)
                        else:
                            loss, br = dsr_objective(model, b.x, b.source_y, b.domain,
                                                     b.n_source, cfg, lam_sem, lam_dom,
                                                     rng=eps_rng, gamma=gamma)
                        if not br.total < cfg.divergence_threshold:
                            raise NumericError(f"loss diverged: total={br.total:g} at "
                                               f"epoch {epoch}")
                        grads = ad.backward(loss)
                except NumericError as exc:
                    raise NumericError(f"{exc} (last good checkpoint: {last_good})",
                                       last_checkpoint=last_good) from exc
                opt.step({k: grads[p] for k, p in opt.params.items()})
                step += 1
                n_batches += 1
                for k, v in br.as_dict().items():
                    sums[k] = sums.get(k, 0.0) + v
            losses = {k: v / n_batches for k, v in sums.items()}
            mon = monitor(model) if monitor is not None else {}
            src_acc = mon.get("source_accuracy")
            if src_acc is None:
                src_acc = accuracy(model, view.source_x, view.source_y)
            rec = MetricsRecord(epoch, losses, src_acc, mon.get("target_accuracy"),
                                lam_sem, lam_dom, time.perf_counter() - t0)
            history.append(rec)
            log.info("epoch %d total=%.4f src=%.3f tgt=%s", epoch, losses["total"], src_acc,
                     rec.target_accuracy)
            if metrics_fh is not None:
                metrics_fh.write(rec.to_json() + "\n")
                metrics_fh.flush()
                timing_fh.write(json.dumps({"epoch": epoch, "seconds": rec.seconds}) + "\n")
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                last_good = _write_checkpoint(model, out_dir)
        last_good = _write_checkpoint(model, out_dir)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()
    return TrainResult(model, history, last_good)


def train(cfg: TrainConfig, view: TrainingView, monitor: Callable | None = None,
          out_dir=None, model: DsrModel | None = None) -> TrainResult:
    """Train from scratch (or from ``model``) in ``cfg.mode``.

    ``monitor(model) -> {"source_accuracy", "target_accuracy"}`` supplies
    per-epoch accuracies; target labels never reach the training losses.
    """
    cfg.validate()
    if hasattr(view, "training_view"):
        view = view.training_view()
    if model is None:
        model = DsrModel(cfg.model_dims(view.d, view.n_classes), rng_for(cfg.seed, "init"))
    gamma = 0.0 if cfg.mode == "dsr_no_domain_module" else cfg.gamma
    return _fit(cfg, view, model, monitor, out_dir, gamma, cfg.mode)


def load_model(cfg: TrainConfig, in_dim: int, n_classes: int, checkpoint) -> DsrModel:
    model = DsrModel(cfg.model_dims(in_dim, n_classes), rng_for(cfg.seed, "init"))
    model.params.load_arrays(load_checkpoint(checkpoint))
    return model


def train_ablation(cfg: TrainConfig, view: TrainingView, checkpoint, monitor=None,
                   out_dir=None) -> TrainResult:
    """Resume a converged DSR checkpoint and continue without the domain module (gamma = 0).

    The run picks up where a converged one left off, so the lambda schedule
    is held at its end value rather than ramped again from 0.
    """
    if checkpoint is None or not Path(checkpoint).exists():
        raise ConfigError(f"checkpoint: ablation needs an existing DSR checkpoint, got {checkpoint}")
    if hasattr(view, "training_view"):
        view = view.training_view()
    cfg = TrainConfig.from_dict({**cfg.to_dict(), "mode": "dsr_no_domain_module"})
    cfg.validate()
    model = load_model(cfg, view.d, view.n_classes, checkpoint)
    return _fit(cfg, view, model, monitor, out_dir, 0.0, cfg.mode, start_progress=1.0)


__all__ = ["TrainConfig", "MetricsRecord", "TrainResult", "MODES", "GROUPS", "lambda_at",
           "train", "train_ablation", "load_model", "dsr_objective", "LossBreakdown"]
