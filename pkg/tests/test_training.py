import logging

import numpy as np
import pytest

from conftest import random_utterance
from mpa.errors import DivergedError, InvalidInput
from mpa.model import toy_config
from mpa.training import MaskPattern, TrainConfig, Utterance, finetune, make_batches, pretrain, sample_mask

SMALL = dict(d_model=16, n_heads=2, ffn_dim=32)


def corpus(n, seed=0, labels=False):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        x, y = random_utterance(rng, n_frames=int(rng.integers(10, 30)), n_tokens=int(rng.integers(2, 5)))
        lab = [int(v) for v in rng.integers(0, 3, size=len(y))] if labels else None
        out.append(Utterance(f"u{k}", x, y, lab))
    return out


class TestMasks:
    def test_count_distribution(self):
        rng = np.random.default_rng(0)
        counts = np.bincount([len(sample_mask(8, rng)) for _ in range(10000)], minlength=9)[1:]
        np.testing.assert_allclose(counts / 10000, 0.125, atol=0.01)

    def test_positions_uniform(self):
        rng = np.random.default_rng(1)
        hits = np.zeros(6)
        for _ in range(6000):
            hits[list(sample_mask(6, rng).positions)] += 1
        # each position is masked with probability E[k]/n = 3.5/6
        np.testing.assert_allclose(hits / 6000, 3.5 / 6, atol=0.03)

    def test_pattern_validation(self):
        with pytest.raises(InvalidInput):
            MaskPattern((), 3)
        with pytest.raises(InvalidInput):
            MaskPattern((1, 1), 3)
        with pytest.raises(InvalidInput):
            MaskPattern((3,), 3)
        with pytest.raises(InvalidInput):
            sample_mask(0, np.random.default_rng(0))


class TestBatches:
    def test_every_utterance_once(self):
        utts = corpus(9)
        batches = make_batches(utts, 60, np.random.default_rng(0))
        assert sorted(i for b in batches for i in b) == list(range(9))
        for b in batches:
            longest = max(utts[i].frames.shape[0] for i in b)
            assert len(b) == 1 or longest * len(b) <= 60


class TestPretrain:
    def test_loss_decreases(self):
        utts = corpus(3)
        _, hist = pretrain(utts, toy_config(13, dropout=0.0, **SMALL), TrainConfig(max_steps=60, warmup_steps=5, lr=3e-3))
        assert np.mean(hist.losses[-10:]) < np.mean(hist.losses[:10])
        rec = hist.records[0]
        assert set(rec) == {"step", "epoch", "loss", "loss_sum", "lr", "wall_ms"}

    def test_deterministic(self):
        cfg, tc = toy_config(13, **SMALL), TrainConfig(max_steps=5, warmup_steps=2)
        a, ha = pretrain(corpus(4), cfg, tc)
        b, hb = pretrain(corpus(4), cfg, tc)
        assert ha.losses == hb.losses
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_divergence_raises(self):
        utts = corpus(2)
        utts[0].frames[3, 5] = np.nan
        with pytest.raises(DivergedError):
            pretrain(utts, toy_config(13, **SMALL), TrainConfig(max_steps=3))

    def test_step_budget(self):
        ck, hist = pretrain(corpus(2), toy_config(13, **SMALL), TrainConfig(max_steps=7, batch_frames=10))
        assert ck.step == 7 and len(hist.records) == 7

    @pytest.mark.parametrize("field", ["lr", "max_steps", "batch_frames"])
    def test_config_validation(self, field):
        with pytest.raises(InvalidInput):
            TrainConfig(**{field: 0})


class TestFinetune:
    def _base(self):
        ck, _ = pretrain(corpus(3), toy_config(13, **SMALL), TrainConfig(max_steps=2))
        return ck

    def test_skips_unlabelled(self, caplog):
        utts = corpus(3, labels=True) + corpus(1, seed=9)
        with caplog.at_level(logging.WARNING):
            ck, hist = finetune(self._base(), utts, TrainConfig(max_steps=3), scale_max=2)
        assert "no labels" in caplog.text
        assert ck.head is not None and ck.scale_max == 2.0
        assert len(hist.records) == 3

    def test_label_out_of_range(self):
        utts = corpus(2, labels=True)
        utts[1].labels[0] = 3
        with pytest.raises(InvalidInput):
            finetune(self._base(), utts, TrainConfig(max_steps=1), scale_max=2)

    def test_fits_labels(self):
        utts = corpus(2, labels=True)
        ck, hist = finetune(self._base(), utts, TrainConfig(max_steps=150, lr=3e-3, warmup_steps=10), scale_max=2)
        assert np.mean(hist.losses[-10:]) < 0.5 * np.mean(hist.losses[:10])

    def test_backbone_is_updated(self):
        base = self._base()
        ck, _ = finetune(base, corpus(2, labels=True), TrainConfig(max_steps=3), scale_max=2)
        assert not np.array_equal(ck.params["enc.conv1.w"], base.params["enc.conv1.w"])
