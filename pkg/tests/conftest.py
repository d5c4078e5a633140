import numpy as np
import pytest

from motionalign.dataset import PoseSequence
from motionalign.encoder import EncoderConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return EncoderConfig(input_dim=6, depth=1, hidden=8, heads=2, mlp_ratio=2.0, output_dim=5, max_len=9)


def make_sequences(n, frames=12, joints=2, channels=3, seed=0, prefix="s"):
    rng = np.random.default_rng(seed)
    return [
        PoseSequence(f"{prefix}{i:03d}", 30.0, joints, channels, rng.normal(size=(frames, joints, channels)))
        for i in range(n)
    ]
