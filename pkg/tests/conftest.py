import pytest
import torch

from sfe.config import TrainConfig
from sfe.render import Generator


def tiny_config() -> TrainConfig:
    """Small shapes for fast unit tests; semantics layout matches the default."""
    cfg = TrainConfig()
    cfg.model.latent_dim = 16
    cfg.model.num_levels = 4
    cfg.model.coarse_samples = 16
    cfg.model.feature_dim = 16
    cfg.model.geometry_depth = 2
    cfg.model.geometry_width = 32
    cfg.model.appearance_depth = 2
    cfg.model.appearance_width = 32
    cfg.model.field_depth = 2
    cfg.model.field_width = 16
    cfg.model.mapping.depth = 2
    cfg.model.mapping.width = 32
    cfg.render.width = 16
    cfg.render.height = 16
    cfg.training.batch_size = 2
    cfg.data.synthetic.count = 8
    return cfg


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    return tiny_config()


@pytest.fixture
def tiny_gen(tiny_cfg) -> Generator:
    torch.manual_seed(0)
    return Generator(tiny_cfg)
