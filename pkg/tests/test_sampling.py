import numpy as np
import pytest

from bakekit.data import build_class_index
from bakekit.errors import ConfigError
from bakekit.sampling import SamplerConfig, epoch_batches


def make_index(class_sizes):
    labels = np.repeat(np.arange(len(class_sizes)), class_sizes)
    return build_class_index(labels), labels


class TestEpochBatches:
    def test_m0_is_a_plain_shuffle(self):
        index, _ = make_index([4, 4])
        batches = epoch_batches(index, SamplerConfig(n_hat=4, m=0, seed=1), epoch=0)
        assert len(batches) == 2
        assert all(len(b) == 4 for b in batches)
        assert sorted(i for b in batches for i in b) == list(range(8))

    def test_reference_batch_size_512(self):
        index, _ = make_index([64] * 16)  # 1024 examples, divisible by n_hat
        cfg = SamplerConfig(n_hat=256, m=1, seed=0)
        batches = epoch_batches(index, cfg, epoch=0)
        assert cfg.batch_size == 512
        assert all(len(b) == 512 for b in batches)

    def test_companions_share_anchor_class(self):
        index, labels = make_index([5, 5, 5, 5])
        cfg = SamplerConfig(n_hat=2, m=3, seed=2)
        for batch in epoch_batches(index, cfg, epoch=0):
            assert len(batch) == 8
            for a in range(0, 8, 4):
                anchor_class = labels[batch[a]]
                companions = batch[a + 1 : a + 4]
                assert all(labels[c] == anchor_class for c in companions)
                assert batch[a] not in companions

    def test_small_class_draws_with_replacement(self):
        index, labels = make_index([2, 2])  # only 1 possible companion each
        cfg = SamplerConfig(n_hat=2, m=3, seed=3)
        for batch in epoch_batches(index, cfg, epoch=0):
            for a in range(0, len(batch), 4):
                companions = batch[a + 1 : a + 4]
                assert all(labels[c] == labels[batch[a]] for c in companions)

    def test_singleton_class_repeats_anchor(self):
        index = {0: [0], 1: [1, 2]}
        cfg = SamplerConfig(n_hat=3, m=1, seed=4)
        (batch,) = epoch_batches(index, cfg, epoch=0)
        pos = batch.index(0)
        assert batch[pos + 1] == 0  # no other member of class 0 exists

    def test_anchor_coverage_once_per_epoch(self):
        index, _ = make_index([6, 6, 6])
        cfg = SamplerConfig(n_hat=6, m=1, seed=5)
        batches = epoch_batches(index, cfg, epoch=3)
        anchors = [b[i] for b in batches for i in range(0, len(b), 2)]
        assert sorted(anchors) == list(range(18))

    def test_trailing_partial_batch_dropped(self):
        index, _ = make_index([5, 5])
        batches = epoch_batches(index, SamplerConfig(n_hat=4, m=0, seed=6), epoch=0)
        assert len(batches) == 2  # 10 anchors -> 2 full batches of 4

    def test_determinism_and_epoch_variation(self):
        index, _ = make_index([8, 8])
        cfg = SamplerConfig(n_hat=4, m=1, seed=7)
        assert epoch_batches(index, cfg, 2) == epoch_batches(index, cfg, 2)
        assert epoch_batches(index, cfg, 2) != epoch_batches(index, cfg, 3)

    def test_empty_index_rejected(self):
        with pytest.raises(ConfigError):
            epoch_batches({}, SamplerConfig(n_hat=2, m=0, seed=0), 0)
        with pytest.raises(ConfigError):
            epoch_batches({0: []}, SamplerConfig(n_hat=2, m=0, seed=0), 0)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SamplerConfig(n_hat=0)
        with pytest.raises(ConfigError):
            SamplerConfig(m=-1)
