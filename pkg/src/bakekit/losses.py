"""Training objectives: cross-entropy, temperature distillation, smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .bake import build_soft_targets, one_hot
from .errors import ConfigError, ShapeMismatchError


@dataclass(frozen=True)
class LossConfig:
    """distill_weight scales the KL term; tau is the shared temperature."""

    distill_weight: float = 1.0
    tau: float = 4.0
    smoothing_epsilon: float = 0.1

    def __post_init__(self):
        if self.distill_weight < 0.0:
            raise ConfigError(f"distill_weight must be >= 0, got {self.distill_weight}")
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.smoothing_epsilon < 1.0:
            raise ConfigError(
                f"smoothing_epsilon must be in [0, 1), got {self.smoothing_epsilon}"
            )


def temperature_probs(logits, tau):
    """Temperature-scaled softmax probabilities; differentiable."""
    if tau <= 0.0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    return nm.softmax_rows(logits * (1.0 / tau))


def _check_labels(labels, k):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ShapeMismatchError(f"label {bad} outside [0, {k})")
    return labels


def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[y]; no temperature."""
    labels = _check_labels(labels, logits.shape[1])
    log_p = nm.log_softmax_rows(logits)
    return -nm.pick(log_p, labels).mean()


def kl_distillation(logits, targets, tau):
    """Mean tau^2-scaled KL(targets || softmax(logits/tau)).

    ``targets`` is a constant array (detached by construction); only the
    logits receive gradient. 0*log 0 is taken as 0.
    """
    if tau <= 0.0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    q = np.asarray(getattr(targets, "data", targets), dtype=np.float64)
    row_sums = q.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ShapeMismatchError(
            f"target row {bad} sums to {row_sums[bad]:.8f}, expected 1"
        )
    n = q.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        qlogq = np.where(q > 0.0, q * np.log(np.where(q > 0.0, q, 1.0)), 0.0)
    log_p = nm.log_softmax_rows(logits * (1.0 / tau))
    cross = (log_p * q).sum() * (1.0 / n)
    return (float(qlogq.sum()) / n - cross) * tau**2


def bake_loss(logits, features, labels, bake_cfg, loss_cfg):
    """Combined objective: cross-entropy plus weighted batch-ensembled KL."""
    ce = cross_entropy(logits, labels)
    if loss_cfg.distill_weight == 0.0:
        return ce
    targets = build_soft_targets(features, logits, labels=labels, cfg=bake_cfg)
    return ce + loss_cfg.distill_weight * kl_distillation(logits, targets, loss_cfg.tau)


def label_smoothing_loss(logits, labels, epsilon):
    """Cross-entropy against (1-eps)*onehot + eps/K targets."""
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"epsilon must be in [0, 1), got {epsilon}")
    labels = _check_labels(labels, logits.shape[1])
    k = logits.shape[1]
    targets = (1.0 - epsilon) * one_hot(labels, k) + epsilon / k
    log_p = nm.log_softmax_rows(logits)
    return -(log_p * targets).sum() * (1.0 / logits.shape[0])
