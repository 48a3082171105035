"""Masked pre-training for pronunciation assessment.

An audio-conditioned bidirectional masked language model scores each reference
token by masking it and reading back its log-likelihood given the audio and the
rest of the text.
"""

from .errors import (
    DivergedError,
    FormatError,
    InvalidInput,
    InvalidState,
    MissingPronunciation,
    ShapeError,
    UndefinedCorrelation,
)
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
