"""Mini-batch construction: per-class companion sampling and plain shuffles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SamplerConfig:
    """n_hat anchors per batch, m same-class companions per anchor.

    Emitted batch size is n_hat * (m + 1). m = 0 degenerates to plain
    seeded random batching.
    """

    n_hat: int = 32
    m: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_hat < 1:
            raise ConfigError(f"n_hat must be >= 1, got {self.n_hat}")
        if self.m < 0:
            raise ConfigError(f"m must be >= 0, got {self.m}")

    @property
    def batch_size(self):
        return self.n_hat * (self.m + 1)


def epoch_batches(class_index, cfg, epoch):
    """Batches of example ids for one epoch, deterministic in (cfg, epoch).

    Anchors are a fresh shuffle of the whole dataset; each anchor is
    followed by m companions drawn from its class (anchor excluded when
    the class has >= 2 examples; with replacement when the class is too
    small to supply m distinct companions). The trailing group of fewer
    than n_hat anchors is dropped.
    """
    if not class_index or any(len(v) == 0 for v in class_index.values()):
        raise ConfigError("class_index must be nonempty with nonempty classes")
    rng = np.random.default_rng(np.uint64(cfg.seed) ^ np.uint64(epoch))
    id_to_class = {}
    for c, ids in class_index.items():
        for i in ids:
            id_to_class[i] = c
    anchors = np.array(sorted(id_to_class), dtype=np.int64)
    rng.shuffle(anchors)
    n_batches = len(anchors) // cfg.n_hat
    batches = []
    for b in range(n_batches):
        batch = []
        for anchor in anchors[b * cfg.n_hat : (b + 1) * cfg.n_hat]:
            batch.append(int(anchor))
            if cfg.m == 0:
                continue
            pool = [i for i in class_index[id_to_class[int(anchor)]] if i != anchor]
            if not pool:
                pool = [int(anchor)]
            replace = len(pool) < cfg.m
            batch.extend(int(i) for i in rng.choice(pool, size=cfg.m, replace=replace))
        batches.append(batch)
    return batches
