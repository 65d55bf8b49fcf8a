import pytest

from malacopula.config import EmbedderConfig


@pytest.fixture
def tiny_embedder() -> EmbedderConfig:
    """Small enough for finite-difference checks on signals of a few dozen samples."""
    return EmbedderConfig(
        frame_length=16, hop_length=8, fft_size=32, mel_bands=6, embedding_dim=8, projection_seed=7
    )
