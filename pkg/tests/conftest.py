import numpy as np
import pytest

from atlas_avs.config import ModelConfig, preset


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(height=8, width=8, patch=4, d_v=8, depth=1, mlp_hidden=12, d_raw=4, d_a=4,
                       audio_hidden=8, audio_tokens=2, decoder_hidden=8, decoder_block=4, rank=2,
                       alpha=4.0)


@pytest.fixture
def quick_cfg():
    """ss-desk CIL shrunk to seconds: 8x8 frames, 2 epochs, few samples."""
    return preset("ss-desk").replace(**{
        "epochs": 2, "data.n_train": 8, "data.n_test": 4, "model.height": 8, "model.width": 8,
        "model.d_v": 16, "model.mlp_hidden": 16, "model.depth": 1,
    })


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
