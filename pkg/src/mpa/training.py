"""Masked pre-training and supervised fine-tuning loops."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .checkpoint import Checkpoint
from .errors import DivergedError, InvalidInput
from .model import MPAModel, batch_masked_nll, collate_audio, collate_text, init_head, train_ctx

log = logging.getLogger(__name__)

LABEL_MAX = {"phoneme": 2, "word": 10}


@dataclass(frozen=True)
class MaskPattern:
    positions: tuple
    length: int

    def __post_init__(self):
        pos = tuple(int(i) for i in self.positions)
        if not 1 <= len(pos) <= self.length:
            raise InvalidInput("mask must cover between 1 and length positions")
        if len(set(pos)) != len(pos) or min(pos) < 0 or max(pos) >= self.length:
            raise InvalidInput("mask positions must be unique and in range")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)


def sample_mask(maskable_len, rng):
    """Mask count uniform on 1..maskable_len, then that many distinct positions."""
    if maskable_len < 1:
        raise InvalidInput("nothing to mask in an empty sequence")
    k = int(rng.integers(1, maskable_len + 1))
    positions = np.sort(rng.choice(maskable_len, size=k, replace=False))
    return MaskPattern(tuple(positions.tolist()), maskable_len)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup_steps: int = 100
    batch_frames: int = 20000
    max_epochs: int = 100000
    max_steps: int = 2000
    seed: int = 7
    clip_norm: float = 1.0
    log_every: int = 10

    def __post_init__(self):
        for name in ("lr", "warmup_steps", "batch_frames", "max_epochs", "max_steps", "clip_norm", "log_every"):
            if getattr(self, name) <= 0:
                raise InvalidInput(f"{name} must be positive")


@dataclass
class Utterance:
    """One training/eval example with features already extracted."""

    id: str
    frames: np.ndarray  # (T, n_mel)
    ids: list
    labels: list = None
    level: str = "word"


@dataclass
class History:
    records: list = field(default_factory=list)

    @property
    def losses(self):
        return [r["loss"] for r in self.records]


def make_batches(utts, batch_frames, rng):
    """Length-bucketed batches whose padded frame count stays within ``batch_frames``.

    Returns lists of indices into ``utts``; batch order is shuffled with ``rng``.
    """
    order = sorted(range(len(utts)), key=lambda i: (utts[i].frames.shape[0], utts[i].id))
    batches, cur, cur_max = [], [], 0
    for i in order:
        t = utts[i].frames.shape[0]
        if cur and max(cur_max, t) * (len(cur) + 1) > batch_frames:
            batches.append(cur)
            cur, cur_max = [], 0
        cur.append(i)
        cur_max = max(cur_max, t)
    if cur:
        batches.append(cur)
    perm = rng.permutation(len(batches))
    return [batches[j] for j in perm]


def _check_finite(loss, step, history):
    if not math.isfinite(loss):
        recent = history.losses[-5:]
        raise DivergedError(f"non-finite loss at step {step}; recent losses {recent}")


def _optimizer_update(model, names, state, cfg):
    grads = model.grads()
    picked = {n: grads.get(n) for n in names}
    norm = nn.clip_grad_norm([g for g in picked.values() if g is not None], cfg.clip_norm)
    state.lr = nn.inverse_sqrt_lr(state.step + 1, cfg.lr, cfg.warmup_steps)
    params = model.all_params()
    nn.adam_step({n: params[n] for n in names}, picked, state)
    return norm


def pretrain(utts, model_config, train_config, vocab=None, on_log=None, model=None):
    """Masked pre-training: per utterance, mask a uniform-count random subset and predict it."""
    utts = [u for u in utts if len(u.ids) > 0]
    if not utts:
        raise InvalidInput("pre-training needs at least one non-empty utterance")
    cfg = train_config
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = MPAModel(model_config, seed=cfg.seed)
    names = list(model.params)
    state = nn.OptimizerState(lr=cfg.lr)
    history = History()
    step = 0
    for epoch in range(cfg.max_epochs):
        for batch in make_batches(utts, cfg.batch_frames, rng):
            if step >= cfg.max_steps:
                break
            t0 = time.perf_counter()
            members = [utts[i] for i in batch]
            masks = [sample_mask(len(u.ids), rng).positions for u in members]
            feats, lengths = collate_audio([u.frames for u in members])
            model.bind(True)
            loss = batch_masked_nll(model, feats, lengths, [u.ids for u in members], masks,
                                    train_ctx(cfg.seed, step))
            value = float(loss.data)
            _check_finite(value, step, history)
            loss.backward()
            _optimizer_update(model, names, state, cfg)
            n_masked = sum(len(m) for m in masks)
            rec = {"step": step, "epoch": epoch, "loss": value, "loss_sum": value * n_masked,
                   "lr": state.lr, "wall_ms": (time.perf_counter() - t0) * 1000.0}
            history.records.append(rec)
            if on_log is not None and step % cfg.log_every == 0:
                on_log(rec)
            step += 1
        if step >= cfg.max_steps:
            break
    model.bind(False)
    ckpt = Checkpoint(model.config, model.params, None, vocab, cfg.seed, step)
    return ckpt, history


def _validated_labels(utts, scale_max):
    kept = []
    for u in utts:
        if u.labels is None:
            log.warning("utterance %s has no labels; skipped", u.id)
            continue
        labels = np.asarray(u.labels, dtype=np.float64)
        if len(labels) != len(u.ids):
            raise InvalidInput(f"utterance {u.id}: {len(labels)} labels for {len(u.ids)} tokens")
        if labels.size and (labels.min() < 0 or labels.max() > scale_max):
            raise InvalidInput(f"utterance {u.id}: labels outside [0, {scale_max}]")
        kept.append(u)
    return kept


def finetune(checkpoint, utts, train_config, scale_max=None, on_log=None):
    """Regress per-token ratings (scaled to [0, 1]) from the unmasked decoder features.

    Backbone and head are both updated. Utterances without labels are skipped.
    """
    cfg = train_config
    level = checkpoint.vocab.level if checkpoint.vocab is not None else (utts[0].level if utts else "word")
    if scale_max is None:
        scale_max = LABEL_MAX[level]
    utts = _validated_labels([u for u in utts if len(u.ids) > 0], scale_max)
    if not utts:
        raise InvalidInput("fine-tuning needs at least one labelled utterance")
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in checkpoint.params.items()}
    head = {k: v.copy() for k, v in checkpoint.head.items()} if checkpoint.head else init_head(checkpoint.config, cfg.seed)
    model = MPAModel(checkpoint.config, params, head)
    names = list(model.all_params())
    state = nn.OptimizerState(lr=cfg.lr)
    history = History()
    step = 0
    for epoch in range(cfg.max_epochs):
        for batch in make_batches(utts, cfg.batch_frames, rng):
            if step >= cfg.max_steps:
                break
            t0 = time.perf_counter()
            members = [utts[i] for i in batch]
            feats, lengths = collate_audio([u.frames for u in members])
            tokens = collate_text([u.ids for u in members])
            target = np.zeros(tokens.shape, dtype=np.float32)
            sel = np.zeros(tokens.shape, dtype=bool)
            for b, u in enumerate(members):
                target[b, 1:1 + len(u.ids)] = np.asarray(u.labels, dtype=np.float32) / scale_max
                sel[b, 1:1 + len(u.ids)] = True
            model.bind(True)
            ctx = train_ctx(cfg.seed, step)
            enc = model.encode(feats, lengths, ctx)
            out = model.decode(tokens, enc, ctx)
            loss = nn.mse_loss(model.head_scores(out.features), target, sel)
            value = float(loss.data)
            _check_finite(value, step, history)
            loss.backward()
            _optimizer_update(model, names, state, cfg)
            rec = {"step": step, "epoch": epoch, "loss": value, "lr": state.lr,
                   "wall_ms": (time.perf_counter() - t0) * 1000.0}
            history.records.append(rec)
            if on_log is not None and step % cfg.log_every == 0:
                on_log(rec)
            step += 1
        if step >= cfg.max_steps:
            break
    return Checkpoint(model.config, model.params, model.head, checkpoint.vocab, cfg.seed, step,
                      scale_max=float(scale_max)), history
