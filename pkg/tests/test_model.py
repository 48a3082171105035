import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_utterance
from mpa import nn
from mpa.errors import InvalidInput, InvalidState, ShapeError
from mpa.model import (
    MPAModel, ModelConfig, apply_mask, batch_masked_nll, collate_text, decode_bidirectional, encode_audio,
    init_head, init_params, masked_nll, score_head_forward, subsampled_length, toy_config,
)
from mpa.text import BOS, EOS, MASK, PAD


def ceil_div(a, b):
    return -(-a // b)


class TestConfig:
    def test_defaults(self):
        c = ModelConfig(vocab_size=100)
        assert (c.d_model, c.n_heads, c.n_encoder_layers, c.n_decoder_layers, c.ffn_dim) == (128, 4, 4, 4, 512)
        assert c.dropout == 0.1

    def test_round_trip(self):
        c = toy_config(20)
        assert ModelConfig.from_dict(c.to_dict()) == c

    @pytest.mark.parametrize("bad", [dict(d_model=30, n_heads=4), dict(dropout=1.0), dict(conv_kernel=4)])
    def test_rejects_bad_values(self, bad):
        with pytest.raises(InvalidInput):
            toy_config(10, **bad)

    def test_param_shapes_checked(self):
        cfg = toy_config(10)
        params = init_params(cfg, 0)
        params["dec.proj.w"] = params["dec.proj.w"][:, :5]
        with pytest.raises(ShapeError):
            MPAModel(cfg, params)

    def test_init_is_seeded(self):
        a, b = init_params(toy_config(10), 4), init_params(toy_config(10), 4)
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestShapes:
    @given(st.integers(1, 1000))
    @settings(max_examples=40, deadline=None)
    def test_subsampled_length(self, t):
        assert subsampled_length(t) == ceil_div(ceil_div(t, 2), 2)

    @pytest.mark.parametrize("t", [1, 2, 3, 4, 5, 17, 98, 301])
    def test_encoder_output_length(self, tiny_model, t):
        x = np.random.default_rng(t).normal(size=(t, 80))
        assert encode_audio(x, tiny_model).shape == (ceil_div(ceil_div(t, 2), 2), 16)

    def test_logits_shape(self, tiny_model, rng):
        x, y = random_utterance(rng, n_tokens=5)
        logits = decode_bidirectional(y, encode_audio(x, tiny_model), tiny_model)
        assert logits.shape == (5, 13)

    def test_collate_text(self):
        out = collate_text([[5, 6], [7]])
        np.testing.assert_array_equal(out, [[BOS, 5, 6, EOS], [BOS, 7, EOS, PAD]])

    def test_batch_padding_does_not_leak(self, tiny_model, rng):
        x1, y1 = random_utterance(rng, n_frames=20, n_tokens=3)
        x2, y2 = random_utterance(rng, n_frames=45, n_tokens=5)
        single1 = masked_nll(x1, y1, [1], tiny_model)
        single2 = masked_nll(x2, y2, [0], tiny_model)
        feats = np.zeros((2, 45, 80), dtype=np.float32)
        feats[0, :20], feats[1] = x1, x2
        tiny_model.bind(False)
        batched = batch_masked_nll(tiny_model, feats, [20, 45], [y1, y2], [[1], [0]])
        # one masked position each, so the batch mean is the mean of the two
        assert batched.item() == pytest.approx((single1 + single2) / 2, abs=1e-5)


class TestBehaviour:
    def test_decoder_is_bidirectional(self, tiny_model, rng):
        x, y = random_utterance(rng, n_tokens=4)
        enc = encode_audio(x, tiny_model)
        a = decode_bidirectional(y, enc, tiny_model)
        y2 = list(y)
        y2[-1] = 5 if y[-1] != 5 else 6
        b = decode_bidirectional(y2, enc, tiny_model)
        assert np.abs(a[0] - b[0]).max() > 0

    def test_all_mask_input(self, tiny_model, rng):
        x, _ = random_utterance(rng)
        logits = decode_bidirectional([MASK] * 4, encode_audio(x, tiny_model), tiny_model)
        assert np.all(np.isfinite(logits))

    def test_zero_projection_gives_log_vocab(self, tiny_model, rng):
        tiny_model.params["dec.proj.w"][:] = 0
        tiny_model.params["dec.proj.b"][:] = 0
        x, y = random_utterance(rng, n_tokens=4)
        assert masked_nll(x, y, [0, 2], tiny_model) == pytest.approx(math.log(13), rel=1e-6)

    def test_zero_head_gives_bias(self, tiny_model, rng):
        tiny_model.head = init_head(tiny_model.config, 0)
        tiny_model.head["head.w"][:] = 0
        tiny_model.head["head.b"][:] = 0.375
        x, y = random_utterance(rng, n_tokens=3)
        np.testing.assert_allclose(score_head_forward(y, encode_audio(x, tiny_model), tiny_model), 0.375)

    def test_head_rejects_mask_and_missing_head(self, tiny_model, rng):
        x, y = random_utterance(rng)
        enc = encode_audio(x, tiny_model)
        with pytest.raises(InvalidState):
            score_head_forward(y, enc, tiny_model)
        tiny_model.head = init_head(tiny_model.config, 0)
        with pytest.raises(InvalidInput):
            score_head_forward(apply_mask(y, [0]), enc, tiny_model)

    def test_attention_rows_sum_to_one(self, tiny_model, rng):
        x, y = random_utterance(rng, n_frames=33, n_tokens=4)
        _, attn = decode_bidirectional(y, encode_audio(x, tiny_model), tiny_model, return_attention=True)
        assert attn.shape == (2, 4, subsampled_length(33))
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)

    def test_invalid_inputs(self, tiny_model, rng):
        x, y = random_utterance(rng)
        with pytest.raises(InvalidInput):
            masked_nll(x, y, [], tiny_model)
        with pytest.raises(InvalidInput):
            masked_nll(x, y, [len(y)], tiny_model)
        with pytest.raises(InvalidInput):
            encode_audio(np.zeros((0, 80)), tiny_model)
        with pytest.raises(InvalidInput):
            decode_bidirectional([99], encode_audio(x, tiny_model), tiny_model)


def full_loss_fd_error(seed=0, n_probe=20):
    """Worst relative error of the masked loss gradient against central differences."""
    rng = np.random.default_rng(seed)
    with nn.precision(np.float64):
        cfg = toy_config(12, d_model=16, n_heads=2, ffn_dim=32, dropout=0.0)
        m = MPAModel(cfg, seed=seed)
        m.params = {k: v.astype(np.float64) for k, v in m.params.items()}
        feats = rng.normal(size=(2, 23, 80))
        ids, masks = [[5, 6, 7, 8], [9, 10, 5]], [[1, 3], [0]]

        def loss():
            m.bind(True)
            return batch_masked_nll(m, feats, [23, 17], ids, masks)

        loss().backward()
        grads = m.grads()
        names = list(m.params)
        worst, h = 0.0, 1e-5
        for _ in range(n_probe):
            name = names[rng.integers(len(names))]
            p = m.params[name]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            old = p[idx]
            p[idx] = old + h
            up = loss().item()
            p[idx] = old - h
            down = loss().item()
            p[idx] = old
            fd, an = (up - down) / (2 * h), grads[name][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def test_full_loss_gradient():
    assert full_loss_fd_error() < 1e-2
