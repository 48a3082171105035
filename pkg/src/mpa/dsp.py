"""Waveform I/O, resampling and 80-channel log-mel filterbank features."""

import math
import wave
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import FormatError, InvalidInput

SAMPLE_RATE = 16000
N_MELS = 80
WINDOW_SAMPLES = 400  # 25 ms
HOP_SAMPLES = 160  # 10 ms
N_FFT = 512
ENERGY_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInput("waveform must be mono (1-D)")
        if int(self.sample_rate_hz) <= 0:
            raise InvalidInput("sample rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise InvalidInput("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel features, shape (T, 80), float32."""

    frames: np.ndarray
    frame_shift_ms: int = 10
    frame_length_ms: int = 25
    sample_rate_hz: int = SAMPLE_RATE

    @property
    def n_frames(self):
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# Resampling


def _design_lowpass(up, down, half_taps=16, beta=8.0):
    """Kaiser-windowed sinc at the upsampled rate, one DC-normalised branch per phase."""
    ratio = max(up, down)
    cutoff = 1.0 / ratio
    half_len = half_taps * ratio
    n = np.arange(-half_len, half_len + 1, dtype=np.float64)
    h = cutoff * np.sinc(cutoff * n) * np.kaiser(len(n), beta)
    # each polyphase branch sums to exactly 1 so DC passes unchanged
    for phase in range(up):
        branch = h[phase::up]
        h[phase::up] = branch / branch.sum()
    return h, half_len


def resample(w, target_hz, backend=None):
    """Band-limited polyphase resampling of ``w`` to ``target_hz``."""
    if len(w) == 0:
        raise InvalidInput("cannot resample an empty waveform")
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise InvalidInput("target rate must be positive")
    if target_hz == w.sample_rate_hz:
        return Waveform(w.samples.copy(), target_hz)
    ratio = Fraction(target_hz, w.sample_rate_hz)
    up, down = ratio.numerator, ratio.denominator
    h, delay = _design_lowpass(up, down)
    n_out = -(-len(w) * up // down)
    y = kernels.polyphase_resample(w.samples, h, up, down, n_out, delay, backend=backend)
    return Waveform(y, target_hz)


# ---------------------------------------------------------------------------
# Mel filterbank


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels=N_MELS, f_min=0.0, f_max=SAMPLE_RATE / 2):
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE, f_min=0.0, f_max=None):
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1)."""
    if f_max is None:
        f_max = sample_rate / 2
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bins = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


_FBANK = mel_filterbank()
_WINDOW = np.hanning(WINDOW_SAMPLES + 1)[:-1]  # periodic Hann


def num_frames(n_samples):
    if n_samples < WINDOW_SAMPLES:
        return 0
    return 1 + (n_samples - WINDOW_SAMPLES) // HOP_SAMPLES


def log_mel_spectrogram(w):
    """80-channel log-mel features, 25 ms Hann window, 10 ms hop, FFT 512."""
    if w.sample_rate_hz != SAMPLE_RATE:
        raise InvalidInput(f"expected {SAMPLE_RATE} Hz audio, got {w.sample_rate_hz} Hz; resample first")
    n = num_frames(len(w))
    if n == 0:
        return MelSpectrogram(np.zeros((0, N_MELS), dtype=np.float32))
    idx = np.arange(WINDOW_SAMPLES)[None, :] + HOP_SAMPLES * np.arange(n)[:, None]
    frames = w.samples[idx] * _WINDOW
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    energies = power @ _FBANK.T
    logmel = np.log(np.maximum(energies, ENERGY_FLOOR))
    return MelSpectrogram(logmel.astype(np.float32))


# ---------------------------------------------------------------------------
# File I/O


def read_wav(path):
    """Read a PCM16 mono WAV file."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getsampwidth() != 2 or fh.getnchannels() != 1:
                raise FormatError(f"{path}: only PCM16 mono WAV is supported")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w):
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def load_features(path):
    """WAV file to log-mel features, resampling to 16 kHz when needed."""
    w = read_wav(path)
    if w.sample_rate_hz != SAMPLE_RATE:
        w = resample(w, SAMPLE_RATE)
    return log_mel_spectrogram(w)


def dump_features_csv(path, mel):
    np.savetxt(path, mel.frames, delimiter=",", fmt="%.6g")


def tone(freq_hz, duration_s, sample_rate=SAMPLE_RATE, amplitude=0.5, phase=0.0):
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return amplitude * np.sin(2 * math.pi * freq_hz * t + phase)
