"""JSONL dataset manifests and the key = value run configuration."""

import json
import os
from dataclasses import dataclass, fields

from .errors import FormatError, InvalidInput
from .model import ModelConfig
from .training import LABEL_MAX, TrainConfig


@dataclass
class ManifestEntry:
    id: str
    audio: str
    text: str
    labels: list = None
    level: str = "word"

    @property
    def tokens(self):
        return self.text.split()


def _entry(d, base_dir, where):
    for key in ("id", "audio", "text"):
        if key not in d:
            raise FormatError(f"{where}: missing field {key!r}")
    level = d.get("level", "word")
    if level not in LABEL_MAX:
        raise FormatError(f"{where}: entry {d['id']}: unknown level {level!r}")
    audio = d["audio"]
    if base_dir and not os.path.isabs(audio):
        audio = os.path.join(base_dir, audio)
    e = ManifestEntry(str(d["id"]), audio, d["text"], d.get("labels"), level)
    if e.labels is not None:
        if len(e.labels) != len(e.tokens):
            raise FormatError(f"{where}: entry {e.id}: {len(e.labels)} labels for {len(e.tokens)} tokens")
        top = LABEL_MAX[level]
        for v in e.labels:
            if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v <= top:
                raise FormatError(f"{where}: entry {e.id}: label {v!r} outside integer range 0..{top}")
    return e


def load_manifest(path):
    """Parse a manifest; relative audio paths resolve against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: {exc}") from exc
            e = _entry(d, base, where)
            if e.id in seen:
                raise FormatError(f"{where}: duplicate id {e.id}")
            seen.add(e.id)
            entries.append(e)
    return entries


# ---------------------------------------------------------------------------
# key = value configuration

MODEL_KEYS = {f.name: f for f in fields(ModelConfig) if f.name != "vocab_size"}
TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}
# everything else the CLI understands; defaults documented in FORMATS.md
EXTRA_DEFAULTS = {"level": "word", "vocab_size": 10000, "vocab": "", "lexicon": "", "preset": "toy",
                  "finetune_lr": 5e-4, "finetune_steps": 600, "scale_max": 0.0}


def _coerce(raw, default):
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text, where="<config>"):
    """Parse ``key = value`` lines (``#`` comments) into a dict of typed values."""
    out = {}
    defaults = dict(EXTRA_DEFAULTS)
    defaults.update({k: f.default for k, f in MODEL_KEYS.items()})
    defaults.update({k: f.default for k, f in TRAIN_KEYS.items()})
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"{where}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise InvalidInput(f"{where}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(raw, defaults[key])
        except ValueError as exc:
            raise InvalidInput(f"{where}:{lineno}: bad value for {key}: {raw!r}") from exc
    return out


def load_config(path=None):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def model_config(cfg, vocab_size):
    """ModelConfig from parsed keys on top of the chosen preset."""
    from .model import toy_config

    overrides = {k: v for k, v in cfg.items() if k in MODEL_KEYS}
    if cfg.get("preset", EXTRA_DEFAULTS["preset"]) == "toy":
        return toy_config(vocab_size, **overrides)
    return ModelConfig(vocab_size=vocab_size, **overrides)


def train_config(cfg, **overrides):
    values = {k: v for k, v in cfg.items() if k in TRAIN_KEYS}
    values.update(overrides)
    return TrainConfig(**values)
