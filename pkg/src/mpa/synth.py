"""Synthetic tone corpus with known audio-text alignment.

Every word maps to one pure tone. An utterance is a run of 100 ms tones with
short silences in between, so the frames belonging to each token are known
exactly. Transcripts follow a small word grammar so that, as in speech,
context is informative. Labelled utterances replace some tones with a
detuned tone (halfway, on the mel scale, to an adjacent word's tone) and rate
them 0; clean tones are rated 2.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .dsp import SAMPLE_RATE, Waveform, hz_to_mel, mel_to_hz, write_wav
from .text import RESERVED, Vocabulary

WORDS = ("ba", "de", "gi", "ko", "lu", "ma", "ne", "pi")
TONE_S = 0.100
GAP_S = 0.040
EDGE_S = 0.080
FADE_S = 0.010
AMPLITUDE = 0.5
NOISE_STD = 1e-3
MIN_LEN, MAX_LEN = 3, 6
# transcripts follow a first-order grammar: word i may be followed by word
# i+1 or i+3 (mod 8), so neighbouring tokens carry information about each other
SUCCESSORS = {w: (WORDS[(i + 1) % len(WORDS)], WORDS[(i + 3) % len(WORDS)]) for i, w in enumerate(WORDS)}


def word_frequencies(f_lo=300.0, f_hi=2400.0):
    """Tone frequency per word, evenly spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), len(WORDS))
    return {w: float(f) for w, f in zip(WORDS, mel_to_hz(mels))}


FREQUENCIES = word_frequencies()


def detuned_frequency(word, direction):
    """Mel-midpoint between ``word``'s tone and the adjacent tone in ``direction`` (+1/-1)."""
    i = WORDS.index(word)
    j = i + direction
    if not 0 <= j < len(WORDS):
        j = i - direction
    m = 0.5 * (hz_to_mel(FREQUENCIES[word]) + hz_to_mel(FREQUENCIES[WORDS[j]]))
    return float(mel_to_hz(m))


@dataclass
class SynthUtterance:
    id: str
    words: list
    samples: np.ndarray
    segments: list  # (start, end) sample index of each token's tone
    labels: list = None

    @property
    def text(self):
        return " ".join(self.words)

    def waveform(self):
        return Waveform(self.samples, SAMPLE_RATE)


def _tone(freq, rng):
    n = int(round(TONE_S * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    env = np.ones(n)
    k = int(round(FADE_S * SAMPLE_RATE))
    env[:k] = np.linspace(0.0, 1.0, k)
    env[-k:] = np.linspace(1.0, 0.0, k)
    return AMPLITUDE * env * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))


def make_utterance(uid, words, rng, corrupt=None):
    """Render ``words`` as tones; ``corrupt[i]`` True detunes token i."""
    gap = np.zeros(int(round(GAP_S * SAMPLE_RATE)))
    edge = np.zeros(int(round(EDGE_S * SAMPLE_RATE)))
    parts, segments, pos = [edge], [], len(edge)
    for i, w in enumerate(words):
        freq = FREQUENCIES[w]
        if corrupt is not None and corrupt[i]:
            freq = detuned_frequency(w, 1 if rng.random() < 0.5 else -1)
        tone = _tone(freq, rng)
        segments.append((pos, pos + len(tone)))
        parts.append(tone)
        pos += len(tone)
        if i < len(words) - 1:
            parts.append(gap)
            pos += len(gap)
    parts.append(edge)
    samples = np.concatenate(parts)
    samples = samples + rng.normal(0.0, NOISE_STD, len(samples))
    labels = None if corrupt is None else [0 if c else 2 for c in corrupt]
    return SynthUtterance(uid, list(words), samples, segments, labels)


def generate(n, seed, corrupt_prob=None, prefix="utt"):
    """``n`` grammatical utterances of 3-6 words; labelled when ``corrupt_prob`` is given."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        length = int(rng.integers(MIN_LEN, MAX_LEN + 1))
        words = [WORDS[int(rng.integers(len(WORDS)))]]
        while len(words) < length:
            words.append(SUCCESSORS[words[-1]][int(rng.integers(2))])
        corrupt = None
        if corrupt_prob is not None:
            corrupt = list(rng.random(length) < corrupt_prob)
        out.append(make_utterance(f"{prefix}{k:04d}", words, rng, corrupt))
    return out


def vocabulary():
    return Vocabulary(list(RESERVED) + list(WORDS), "word")


def segment_frames(segment, hop=160, window=400):
    """Indices of mel frames whose window centre falls inside a sample segment."""
    start, end = segment
    first = int(np.ceil((start - window / 2) / hop))
    last = int(np.floor((end - window / 2) / hop))
    return max(first, 0), last


# corpus splits written by ``write_corpus``: name -> (seed offset, corrupt prob)
SPLITS = {
    "train": (0, None),
    "heldout": (1, None),
    "labeled_train": (2, 0.3),
    "labeled_test": (3, 0.3),
}


def write_corpus(out_dir, n, seed):
    """Write WAVs, one JSONL manifest per split and the vocabulary."""
    os.makedirs(os.path.join(out_dir, "audio"), exist_ok=True)
    for split, (offset, corrupt_prob) in SPLITS.items():
        utts = generate(n, seed * 100 + offset, corrupt_prob, prefix=f"{split}_")
        lines = []
        for u in utts:
            rel = os.path.join("audio", f"{u.id}.wav")
            write_wav(os.path.join(out_dir, rel), u.waveform())
            entry = {"id": u.id, "audio": rel, "text": u.text, "level": "word"}
            if u.labels is not None:
                entry["labels"] = u.labels
            lines.append(json.dumps(entry, sort_keys=True))
        with open(os.path.join(out_dir, f"{split}.jsonl"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    vocabulary().save(os.path.join(out_dir, "vocab.txt"))
