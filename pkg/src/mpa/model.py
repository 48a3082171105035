"""Audio-conditioned masked language model.

The encoder reads log-mel frames through two stride-2 convolutions and a stack
of pre-norm transformer layers. The decoder is a transformer over the reference
text with *no* causal mask: every position sees the whole transcript plus the
audio through cross-attention. A vocabulary projection gives per-position
logits and a one-unit linear head gives per-position regression scores.
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .errors import InvalidInput, InvalidState, ShapeError
from .text import BOS, EOS, MASK, PAD


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 4
    n_decoder_layers: int = 4
    ffn_dim: int = 512
    dropout: float = 0.1
    n_mel: int = 80
    conv_kernel: int = 5
    max_positions: int = 1024

    def __post_init__(self):
        dims = (self.vocab_size, self.d_model, self.n_heads, self.n_encoder_layers,
                self.n_decoder_layers, self.ffn_dim, self.n_mel, self.conv_kernel, self.max_positions)
        if any(int(v) <= 0 for v in dims):
            raise InvalidInput("model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise InvalidInput("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInput("dropout must be in [0, 1)")
        if self.conv_kernel % 2 == 0:
            raise InvalidInput("conv_kernel must be odd for same-padding")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def toy_config(vocab_size, **overrides):
    """Small configuration used for the synthetic corpus and the test suite."""
    base = dict(vocab_size=vocab_size, d_model=64, n_heads=4, n_encoder_layers=2,
                n_decoder_layers=2, ffn_dim=128, dropout=0.1, max_positions=512)
    base.update(overrides)
    return ModelConfig(**base)


def subsampled_length(t):
    """Frames left after two stride-2 same-padded convolutions."""
    return -(-(-(-t // 2)) // 2)


def sinusoidal_positions(n, d):
    pos = np.arange(n, dtype=np.float64)[:, None]
    half = d // 2
    freq = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    table = np.zeros((n, d))
    table[:, :half] = np.sin(pos * freq)
    table[:, half:2 * half] = np.cos(pos * freq)
    return table


def init_params(cfg, seed=0):
    """Fresh parameters, name -> float32 array, in a fixed order."""
    rng = np.random.default_rng(seed)
    d, f, k = cfg.d_model, cfg.ffn_dim, cfg.conv_kernel
    p = {}

    def dense(name, n_in, n_out, scale=1.0):
        bound = scale * math.sqrt(6.0 / (n_in + n_out))
        p[name + ".w"] = rng.uniform(-bound, bound, (n_in, n_out))
        p[name + ".b"] = np.zeros(n_out)

    def norm(name, n):
        p[name + ".g"] = np.ones(n)
        p[name + ".b"] = np.zeros(n)

    def attention(name):
        for part in ("q", "k", "v", "o"):
            dense(f"{name}.{part}", d, d)

    norm("enc.in_norm", cfg.n_mel)
    p["enc.conv1.w"] = rng.normal(0, 1 / math.sqrt(k * cfg.n_mel), (k, cfg.n_mel, d))
    p["enc.conv1.b"] = np.zeros(d)
    p["enc.conv2.w"] = rng.normal(0, 1 / math.sqrt(k * d), (k, d, d))
    p["enc.conv2.b"] = np.zeros(d)
    for i in range(cfg.n_encoder_layers):
        pre = f"enc.layers.{i}"
        norm(pre + ".attn_norm", d)
        attention(pre + ".attn")
        norm(pre + ".ffn_norm", d)
        dense(pre + ".ffn1", d, f)
        dense(pre + ".ffn2", f, d)
    norm("enc.out_norm", d)

    p["dec.embed"] = rng.normal(0, 1.0, (cfg.vocab_size, d))
    # learned, sinusoid-initialised: lets text positions map onto audio frame positions
    p["dec.pos"] = sinusoidal_positions(cfg.max_positions, d)
    for i in range(cfg.n_decoder_layers):
        pre = f"dec.layers.{i}"
        norm(pre + ".self_norm", d)
        attention(pre + ".self_attn")
        norm(pre + ".cross_norm", d)
        attention(pre + ".cross_attn")
        norm(pre + ".ffn_norm", d)
        dense(pre + ".ffn1", d, f)
        dense(pre + ".ffn2", f, d)
    norm("dec.out_norm", d)
    dense("dec.proj", d, cfg.vocab_size, scale=0.1)
    return {name: arr.astype(np.float32) for name, arr in p.items()}


def init_head(cfg, seed=0):
    rng = np.random.default_rng(seed + 7919)
    bound = math.sqrt(6.0 / (cfg.d_model + 1))
    return {"head.w": rng.uniform(-bound, bound, (cfg.d_model, 1)).astype(np.float32),
            "head.b": np.zeros(1, dtype=np.float32)}


@dataclass
class EncoderOutput:
    states: "nn.Tensor"  # (B, T', d)
    mask: np.ndarray  # (B, T') True on real frames

    @property
    def lengths(self):
        return self.mask.sum(axis=1)


@dataclass
class DecoderOutput:
    features: "nn.Tensor"  # (B, L, d)
    logits: "nn.Tensor"  # (B, L, V)
    cross_attention: np.ndarray  # last layer, (B, H, L, T')


class MPAModel:
    """Parameters plus the forward computation.

    ``params`` maps names to float32 arrays; the forward pass wraps them in
    tensors so gradients land in ``grads`` after ``backward``.
    """

    def __init__(self, config, params=None, head=None, seed=0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self.head = head
        self._tensors = {}
        self._check_shapes()

    def _check_shapes(self):
        for name, arr in init_params(self.config, 0).items():
            if name not in self.params:
                raise ShapeError(f"missing parameter {name}")
            if self.params[name].shape != arr.shape:
                raise ShapeError(f"{name}: shape {self.params[name].shape} != {arr.shape}")

    # parameter plumbing -------------------------------------------------

    def all_params(self):
        out = dict(self.params)
        if self.head is not None:
            out.update(self.head)
        return out

    def bind(self, track_grads):
        """Wrap parameter arrays in fresh tensors for one forward pass."""
        self._tensors = {name: nn.Tensor(arr, requires_grad=track_grads, name=name)
                         for name, arr in self.all_params().items()}

    def grads(self):
        return {name: t.grad for name, t in self._tensors.items()}

    def _p(self, name):
        t = self._tensors.get(name)
        if t is None:
            arr = self.all_params()[name]
            t = self._tensors[name] = nn.Tensor(arr, name=name)
        return t

    # building blocks ----------------------------------------------------

    def _linear(self, x, name):
        return nn.linear(x, self._p(name + ".w"), self._p(name + ".b"))

    def _norm(self, x, name):
        return nn.layer_norm(x, self._p(name + ".g"), self._p(name + ".b"), eps=1e-5)

    def _dropout(self, x, ctx):
        ctx["site"] += 1
        return nn.dropout(x, self.config.dropout, (ctx["seed"], ctx["site"], ctx["step"]), ctx["training"])

    def _attention(self, name, q_in, kv_in, key_mask):
        cfg = self.config
        b, lq, d = q_in.shape
        lk = kv_in.shape[1]
        h, dh = cfg.n_heads, d // cfg.n_heads
        q = self._linear(q_in, name + ".q").reshape(b, lq, h, dh).transpose(0, 2, 1, 3)
        k = self._linear(kv_in, name + ".k").reshape(b, lk, h, dh).transpose(0, 2, 3, 1)
        v = self._linear(kv_in, name + ".v").reshape(b, lk, h, dh).transpose(0, 2, 1, 3)
        scores = nn.mul(nn.matmul(q, k), 1.0 / math.sqrt(dh))
        probs = nn.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
        ctx = nn.matmul(probs, v).transpose(0, 2, 1, 3).reshape(b, lq, d)
        return self._linear(ctx, name + ".o"), probs.data

    def _ffn(self, x, name, ctx):
        hidden = nn.gelu(self._linear(x, name + ".ffn1"))
        return self._linear(self._dropout(hidden, ctx), name + ".ffn2")

    # encoder / decoder --------------------------------------------------

    def encode(self, feats, lengths, ctx=None):
        """feats: (B, T, n_mel) padded; lengths: (B,) valid frame counts."""
        ctx = ctx or _eval_ctx()
        feats = np.asarray(feats, dtype=np.float32)
        lengths = np.asarray(lengths, dtype=np.int64)
        if feats.ndim != 3 or feats.shape[2] != self.config.n_mel:
            raise ShapeError(f"expected (B, T, {self.config.n_mel}) features, got {feats.shape}")
        if feats.shape[1] == 0 or lengths.min() < 1:
            raise InvalidInput("audio must have at least one frame")
        pad = self.config.conv_kernel // 2
        t = feats.shape[1]
        frame_mask = np.arange(t)[None, :] < lengths[:, None]
        x = self._norm(nn.Tensor(feats), "enc.in_norm")
        # zero padded frames so batch padding never leaks into the convolutions
        x = nn.mul(x, frame_mask[:, :, None].astype(np.float32))
        x = nn.conv1d(x, self._p("enc.conv1.w"), self._p("enc.conv1.b"), stride=2, padding=pad)
        half = -(-lengths // 2)
        m1 = np.arange(x.shape[1])[None, :] < half[:, None]
        x = nn.mul(nn.gelu(x), m1[:, :, None].astype(np.float32))
        x = nn.conv1d(x, self._p("enc.conv2.w"), self._p("enc.conv2.b"), stride=2, padding=pad)
        t_sub = x.shape[1]
        if t_sub > self.config.max_positions:
            raise InvalidInput(f"{t_sub} encoder frames exceed max_positions={self.config.max_positions}")
        mask = np.arange(t_sub)[None, :] < subsampled_length(lengths)[:, None]
        x = nn.add(x, self._positions(t_sub))
        x = self._dropout(x, ctx)
        for i in range(self.config.n_encoder_layers):
            pre = f"enc.layers.{i}"
            h = self._norm(x, pre + ".attn_norm")
            a, _ = self._attention(pre + ".attn", h, h, mask)
            x = nn.add(x, self._dropout(a, ctx))
            x = nn.add(x, self._dropout(self._ffn(self._norm(x, pre + ".ffn_norm"), pre, ctx), ctx))
        return EncoderOutput(self._norm(x, "enc.out_norm"), mask)

    def decode(self, tokens, enc, ctx=None):
        """tokens: (B, L) ids incl. BOS/EOS/PAD. Bidirectional: only PAD keys are masked."""
        ctx = ctx or _eval_ctx()
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2 or tokens.shape[1] == 0:
            raise ShapeError(f"expected (B, L) token ids, got {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise InvalidInput("token id outside the vocabulary")
        if tokens.shape[1] > self.config.max_positions:
            raise InvalidInput("token sequence exceeds max_positions")
        keep = tokens != PAD
        x = nn.add(nn.embedding(self._p("dec.embed"), tokens), self._p("dec.pos")[:tokens.shape[1]])
        x = self._dropout(x, ctx)
        cross = None
        for i in range(self.config.n_decoder_layers):
            pre = f"dec.layers.{i}"
            h = self._norm(x, pre + ".self_norm")
            a, _ = self._attention(pre + ".self_attn", h, h, keep)
            x = nn.add(x, self._dropout(a, ctx))
            a, cross = self._attention(pre + ".cross_attn", self._norm(x, pre + ".cross_norm"), enc.states, enc.mask)
            x = nn.add(x, self._dropout(a, ctx))
            x = nn.add(x, self._dropout(self._ffn(self._norm(x, pre + ".ffn_norm"), pre, ctx), ctx))
        feats = self._norm(x, "dec.out_norm")
        logits = self._linear(feats, "dec.proj")
        return DecoderOutput(feats, logits, cross)

    def head_scores(self, features):
        if self.head is None:
            raise InvalidState("model has no score head")
        out = self._linear(features, "head")
        return out.reshape(out.shape[:-1])

    def _positions(self, n):
        return nn.Tensor(sinusoidal_positions(n, self.config.d_model))

    def n_parameters(self):
        return int(sum(a.size for a in self.all_params().values()))


def _eval_ctx():
    return {"training": False, "seed": 0, "step": 0, "site": 0}


def train_ctx(seed, step):
    return {"training": True, "seed": seed, "step": step, "site": 0}


# ---------------------------------------------------------------------------
# batching helpers


def collate_audio(frame_list):
    lengths = np.array([f.shape[0] for f in frame_list], dtype=np.int64)
    n_mel = frame_list[0].shape[1]
    out = np.zeros((len(frame_list), int(lengths.max()), n_mel), dtype=np.float32)
    for i, f in enumerate(frame_list):
        out[i, :f.shape[0]] = f
    return out, lengths


def collate_text(id_lists):
    """Wrap each id list in BOS ... EOS and right-pad with PAD."""
    width = max(len(ids) for ids in id_lists) + 2
    out = np.full((len(id_lists), width), PAD, dtype=np.int64)
    for i, ids in enumerate(id_lists):
        out[i, 0] = BOS
        out[i, 1:1 + len(ids)] = ids
        out[i, 1 + len(ids)] = EOS
    return out


def _frames(x):
    return x.frames if hasattr(x, "frames") else np.asarray(x, dtype=np.float32)


def _ids(y):
    return list(y.ids) if hasattr(y, "ids") else [int(i) for i in y]


# ---------------------------------------------------------------------------
# single-utterance operations


def encode_audio(x, model):
    """Encoder states (T', d) for one spectrogram."""
    frames = _frames(x)
    if frames.shape[0] == 0:
        raise InvalidInput("cannot encode an empty spectrogram")
    with nn.no_grad():
        model.bind(False)
        enc = model.encode(frames[None], [frames.shape[0]])
    return enc.states.data[0]


def _single_encoder(enc_states):
    states = np.asarray(enc_states, dtype=np.float32)
    return EncoderOutput(nn.Tensor(states[None]), np.ones((1, states.shape[0]), dtype=bool))


def decode_bidirectional(y, enc_states, model, return_attention=False):
    """Logits (|y|, V) for a content sequence that may contain MASK ids."""
    ids = _ids(y)
    if not ids:
        raise InvalidInput("token sequence must be non-empty")
    if max(ids) >= model.config.vocab_size or min(ids) < 0:
        raise InvalidInput("token id outside the vocabulary")
    with nn.no_grad():
        model.bind(False)
        out = model.decode(collate_text([ids]), _single_encoder(enc_states))
    logits = out.logits.data[0, 1:1 + len(ids)]
    if return_attention:
        return logits, out.cross_attention[0, :, 1:1 + len(ids)]
    return logits


def apply_mask(ids, positions):
    masked = list(ids)
    for i in positions:
        masked[i] = MASK
    return masked


def masked_nll(x, y, positions, model):
    """Mean NLL of the original tokens at ``positions`` after replacing them with MASK."""
    ids = _ids(y)
    positions = sorted(set(int(i) for i in positions))
    if not positions:
        raise InvalidInput("mask pattern must be non-empty")
    if positions[0] < 0 or positions[-1] >= len(ids):
        raise InvalidInput("mask position outside the sequence")
    enc = encode_audio(x, model)
    logits = decode_bidirectional(apply_mask(ids, positions), enc, model)
    sel = np.zeros(len(ids), dtype=bool)
    sel[positions] = True
    with nn.no_grad():
        loss = nn.cross_entropy(nn.Tensor(logits), ids, sel)
    return float(loss.data)


def batch_masked_nll(model, feats, lengths, id_lists, mask_lists, ctx=None):
    """Differentiable mean NLL over every masked position of a padded batch.

    ``mask_lists[b]`` holds positions into ``id_lists[b]`` (content tokens,
    BOS/EOS excluded). Call ``model.bind(True)`` first to collect gradients.
    """
    tokens = collate_text(id_lists)
    targets = tokens.copy()
    sel = np.zeros(tokens.shape, dtype=bool)
    for b, positions in enumerate(mask_lists):
        for i in positions:
            tokens[b, 1 + i] = MASK
            sel[b, 1 + i] = True
    enc = model.encode(feats, lengths, ctx)
    out = model.decode(tokens, enc, ctx)
    return nn.cross_entropy(out.logits, targets, sel)


def score_head_forward(y_full, enc_states, model):
    """Raw head outputs, one per token of the unmasked reference."""
    ids = _ids(y_full)
    if MASK in ids:
        raise InvalidInput("score head expects the unmasked reference text")
    if model.head is None:
        raise InvalidState("model has no score head")
    with nn.no_grad():
        model.bind(False)
        out = model.decode(collate_text([ids]), _single_encoder(enc_states))
        scores = model.head_scores(out.features)
    return scores.data[0, 1:1 + len(ids)].astype(np.float64)
