"""Pronunciation scoring with a trained model.

Unsupervised scoring masks one reference token at a time and reads back the
log-probability of the original token; the audio is encoded once and reused
for all passes. Supervised scoring runs the regression head over the unmasked
reference.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import InvalidInput, InvalidState
from .model import apply_mask, decode_bidirectional, encode_audio, score_head_forward, subsampled_length
from .text import MASK, RESERVED, TokenSequence

log = logging.getLogger(__name__)


@dataclass
class TokenScore:
    position: int
    token_id: int
    log_likelihood: float = None
    scaled_score: float = None
    predicted_id: int = None


@dataclass
class ScoreReport:
    utterance_id: str
    level: str
    scores: list = field(default_factory=list)
    mode: str = "unsup"

    def __len__(self):
        return len(self.scores)

    @property
    def mean_log_likelihood(self):
        lls = [s.log_likelihood for s in self.scores if s.log_likelihood is not None]
        return float(np.mean(lls)) if lls else None

    @property
    def scaled_scores(self):
        return [s.scaled_score for s in self.scores]

    def to_json(self, vocab=None):
        tokens = []
        for s in self.scores:
            d = asdict(s)
            if vocab is not None:
                d["token"] = vocab.token(s.token_id)
            tokens.append(d)
        return json.dumps({"id": self.utterance_id, "level": self.level, "mode": self.mode,
                           "mean_log_likelihood": self.mean_log_likelihood, "tokens": tokens},
                          sort_keys=True)

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        scores = [TokenScore(**{k: t.get(k) for k in ("position", "token_id", "log_likelihood",
                                                       "scaled_score", "predicted_id")})
                  for t in d["tokens"]]
        return cls(d["id"], d["level"], scores, d.get("mode", "unsup"))


@dataclass
class AttentionMap:
    weights: np.ndarray  # (|y|, T')
    token_ids: tuple = ()

    @property
    def shape(self):
        return self.weights.shape

    def argmax_frames(self):
        return self.weights.argmax(axis=1)


def _ids(y):
    return list(y.ids) if hasattr(y, "ids") else [int(i) for i in y]


def _token_ll(logits, ids, i):
    """log P(ids[i]) at row i, computed by the same routine as the training loss."""
    sel = np.zeros(len(ids), dtype=bool)
    sel[i] = True
    with nn.no_grad():
        return -float(nn.cross_entropy(nn.Tensor(logits), ids, sel).data)


def score_token(x, y, i, model, enc=None):
    """log P(y_i | audio, y without position i)."""
    ids = _ids(y)
    if not 0 <= i < len(ids):
        raise InvalidInput(f"position {i} outside a sequence of length {len(ids)}")
    if enc is None:
        enc = encode_audio(x, model)
    logits = decode_bidirectional(apply_mask(ids, [i]), enc, model)
    return _token_ll(logits, ids, i)


def scale_score(ll, scale_max):
    """Map a log-likelihood onto [0, scale_max] as scale_max * probability."""
    if ll > 0:
        raise InvalidInput(f"log-likelihood must be <= 0, got {ll}")
    return float(scale_max) * math.exp(ll)


def score_utterance(x, y, model, utterance_id="", level="word", scale_max=2.0, recompute_encoder=False):
    """One single-mask pass per token; the encoder runs once unless ``recompute_encoder``."""
    ids = _ids(y)
    if not ids:
        raise InvalidInput("cannot score an empty token sequence")
    enc = None if recompute_encoder else encode_audio(x, model)
    report = ScoreReport(utterance_id, level, mode="unsup")
    for i in range(len(ids)):
        e = encode_audio(x, model) if recompute_encoder else enc
        logits = decode_bidirectional(apply_mask(ids, [i]), e, model)
        ll = _token_ll(logits, ids, i)
        report.scores.append(TokenScore(i, ids[i], ll, scale_score(ll, scale_max),
                                        int(np.argmax(logits[i]))))
    return report


def predict_supervised_scores(x, y, model, utterance_id="", level="word", scale_max=None):
    """Head outputs on the unmasked reference, rescaled and clipped to [0, scale_max]."""
    if model.head is None:
        raise InvalidState("supervised scoring needs a fine-tuned checkpoint with a score head")
    if scale_max is None:
        raise InvalidInput("scale_max is required for supervised scoring")
    ids = _ids(y)
    raw = score_head_forward(ids, encode_audio(x, model), model)
    scaled = np.clip(raw * scale_max, 0.0, scale_max)
    report = ScoreReport(utterance_id, level, mode="sup")
    report.scores = [TokenScore(i, ids[i], None, float(s)) for i, s in enumerate(scaled)]
    return report


def mask_predict_decode(x, n, steps, model, return_trace=False):
    """Iterative decoding from an all-MASK sequence of length ``n``.

    Each step predicts every still-masked position and commits the
    ceil(n/steps) most confident ones (ties to the lower index); the last
    step commits whatever remains. Reserved ids are never predicted.
    """
    if n < 1 or steps < 1:
        raise InvalidInput("decode length and step count must be at least 1")
    if steps > n:
        log.warning("steps=%d exceeds length %d; clamping", steps, n)
        steps = n
    enc = encode_audio(x, model)
    ids = [MASK] * n
    pending = set(range(n))
    per_step = -(-n // steps)
    trace = []
    n_reserved = len(RESERVED)
    for step in range(steps):
        if not pending:
            break
        logits = decode_bidirectional(ids, enc, model).astype(np.float64)
        content = logits[:, n_reserved:]
        probs = np.exp(content - content.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        best = probs.argmax(axis=1)
        conf = probs[np.arange(n), best]
        ranked = sorted(pending, key=lambda i: (-conf[i], i))
        take = ranked if step == steps - 1 else ranked[:per_step]
        for i in take:
            ids[i] = int(best[i]) + n_reserved
            pending.discard(i)
        trace.append(sorted(take))
    seq = TokenSequence(ids)
    return (seq, trace) if return_trace else seq


def export_attention(x, y, model):
    """Last-layer cross-attention (head-averaged) of each token's single-mask pass."""
    ids = _ids(y)
    if not ids:
        raise InvalidInput("cannot export attention for an empty token sequence")
    enc = encode_audio(x, model)
    rows = []
    for i in range(len(ids)):
        _, attn = decode_bidirectional(apply_mask(ids, [i]), enc, model, return_attention=True)
        rows.append(attn[:, i, :].astype(np.float64).mean(axis=0))
    return AttentionMap(np.stack(rows), tuple(ids))


def attention_csv(amap, vocab=None):
    n_frames = amap.weights.shape[1]
    lines = ["token," + ",".join(f"f{j}" for j in range(n_frames))]
    for tid, row in zip(amap.token_ids, amap.weights):
        label = vocab.token(tid) if vocab is not None else str(tid)
        lines.append(label + "," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def attention_pgm(amap):
    """Plain (P2) 8-bit PGM, one row per token, each row scaled to its own maximum."""
    w = amap.weights
    peak = w.max(axis=1, keepdims=True)
    img = np.round(255.0 * w / np.where(peak > 0, peak, 1.0)).astype(int)
    lines = ["P2", f"{w.shape[1]} {w.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in img]
    return "\n".join(lines) + "\n"


def expected_frames(n_mel_frames):
    return int(subsampled_length(n_mel_frames))
