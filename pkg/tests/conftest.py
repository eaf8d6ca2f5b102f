import numpy as np
import pytest
import torch

from blindrir.config import (BrpeConfig, DecoderConfig, EncoderConfig,
                             FusionConfig, RunConfig, desk_preset)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def desk_cfg():
    return desk_preset()


@pytest.fixture
def micro_cfg():
    """Smallest legal pipeline: keeps structural tests fast on CPU."""
    cfg = desk_preset()
    cfg.encoder = EncoderConfig(num_blocks=5, channel_schedule=(8, 8, 16, 16, 32),
                                latent_channels=128)
    cfg.brpe = BrpeConfig(embed_dim=32, depth=1, state_dim=4, q_dim=32)
    cfg.fusion = FusionConfig(n_v=8, n_zeta=8, n_a=32, n_c=64, heads=4)
    cfg.decoder = DecoderConfig(base_channels=32, noise_dim=16, num_filters=4,
                                fir_order=63)
    return cfg


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
