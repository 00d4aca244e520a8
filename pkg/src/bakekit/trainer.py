"""The training loop: sample batch, forward, build targets, loss, SGD step."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as ls
from . import models as md
from .bake import BakeConfig, build_soft_targets
from .errors import ConfigError, ShapeMismatchError
from .numerics import Tensor
from .sampling import SamplerConfig, epoch_batches

METHODS = ("vanilla", "label_smoothing", "bake")


@dataclass(frozen=True)
class CosineSchedule:
    """Linear warm-up to base_lr, then half-cosine decay to zero."""

    total_epochs: int
    warmup_epochs: int = 5


@dataclass(frozen=True)
class StepSchedule:
    """base_lr scaled by factor at each milestone epoch."""

    milestones: tuple
    factor: float = 0.1

    def __post_init__(self):
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ConfigError(f"milestones must be strictly increasing: {self.milestones}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: object = None  # CosineSchedule(epochs) when None
    method: str = "bake"
    bake: BakeConfig = field(default_factory=BakeConfig)
    loss: LossConfig = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.loss is None:
            object.__setattr__(self, "loss", ls.LossConfig())
        if self.schedule is None:
            object.__setattr__(self, "schedule", CosineSchedule(self.epochs))


LossConfig = ls.LossConfig  # re-export for TrainConfig callers


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_ce: float
    train_kl: float
    test_top1: float
    test_top5: float
    wall_seconds: float


def lr_at(schedule, epoch, base_lr):
    """Learning rate at a (possibly fractional) epoch."""
    if isinstance(schedule, StepSchedule):
        passed = sum(1 for m in schedule.milestones if epoch >= m)
        return base_lr * schedule.factor**passed
    warm, total = schedule.warmup_epochs, schedule.total_epochs
    if epoch < warm:
        return base_lr * epoch / warm
    span = max(total - warm, 1)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * (epoch - warm) / span))


def sgd_step(params, grads, velocities, lr, momentum, weight_decay):
    """In-place SGD with momentum: v <- m*v + g + wd*p; p <- p - lr*v."""
    for p, g, v in zip(params, grads, velocities):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeMismatchError(
                f"sgd_step: mismatched shapes {p.shape}, {g.shape}, {v.shape}"
            )
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v


def evaluate(model, dataset, batch_size=512):
    """(top-1, top-5) accuracy; ties broken toward the lowest class index."""
    if len(dataset) == 0:
        raise ConfigError("evaluate requires a nonempty dataset")
    k = dataset.num_classes
    top_k = min(5, k)
    hits1 = hits5 = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.inputs[start : start + batch_size].astype(np.float64)
        y = dataset.labels[start : start + batch_size]
        _, logits = model.forward(Tensor(x))
        order = np.argsort(-logits.data, axis=1, kind="stable")
        hits1 += int((order[:, 0] == y).sum())
        hits5 += int((order[:, :top_k] == y[:, None]).any(axis=1).sum())
    return hits1 / len(dataset), hits5 / len(dataset)


def _batch_loss(model, x, y, cfg):
    """Forward one batch; returns (loss tensor, ce value, kl value)."""
    features, logits = model.forward(Tensor(x))
    ce = ls.cross_entropy(logits, y)
    if cfg.method == "vanilla":
        return ce, ce.item(), 0.0
    if cfg.method == "label_smoothing":
        loss = ls.label_smoothing_loss(logits, y, cfg.loss.smoothing_epsilon)
        return loss, loss.item(), 0.0
    targets = build_soft_targets(features, logits, labels=y, cfg=cfg.bake)
    kl = ls.kl_distillation(logits, targets, cfg.loss.tau)
    loss = ce + cfg.loss.distill_weight * kl
    return loss, ce.item(), kl.item()


def train(model, train_set, test_set, cfg):
    """Run the configured number of epochs; returns (model, metrics list)."""
    sampler = cfg.sampler
    if cfg.method != "bake":
        # random batching: the per-class mechanism only serves affinity quality
        sampler = replace(sampler, m=0)
    param_list = list(model.params.values())
    velocities = [np.zeros_like(p.data) for p in param_list]
    metrics = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        batches = epoch_batches(train_set.class_index, sampler, epoch)
        sum_loss = sum_ce = sum_kl = 0.0
        for it, batch in enumerate(batches):
            ids = np.asarray(batch)
            x = train_set.inputs[ids].astype(np.float64)
            y = train_set.labels[ids]
            loss, ce_val, kl_val = _batch_loss(model, x, y, cfg)
            loss.backward()
            lr = lr_at(cfg.schedule, epoch + it / max(len(batches), 1), cfg.base_lr)
            sgd_step(
                [p.data for p in param_list],
                [p.grad for p in param_list],
                velocities,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )
            sum_loss += loss.item()
            sum_ce += ce_val
            sum_kl += kl_val
        n = max(len(batches), 1)
        top1, top5 = evaluate(model, test_set)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=sum_loss / n,
                train_ce=sum_ce / n,
                train_kl=sum_kl / n,
                test_top1=top1,
                test_top5=top5,
                wall_seconds=time.perf_counter() - t0,
            )
        )
    return model, metrics
