import numpy as np
import pytest

from mpa.model import MPAModel, toy_config


@pytest.fixture
def tiny_model():
    """Untrained model small enough for exhaustive checks."""
    cfg = toy_config(13, d_model=16, n_heads=2, ffn_dim=32, dropout=0.0)
    return MPAModel(cfg, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_utterance(rng, vocab_size=13, n_frames=None, n_tokens=None):
    n_frames = n_frames or int(rng.integers(8, 60))
    n_tokens = n_tokens or int(rng.integers(1, 7))
    x = rng.normal(size=(n_frames, 80)).astype(np.float32)
    y = [int(t) for t in rng.integers(5, vocab_size, size=n_tokens)]
    return x, y


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
