import numpy as np
import pytest
import torch

from naryground.config import ModelConfig
from naryground.data import build_token_vocab
from naryground.generator import GenConfig, iter_records

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def gen_cfg():
    return GenConfig(seed=123)


@pytest.fixture(scope="session")
def records200(gen_cfg):
    return list(iter_records(gen_cfg, 200))


@pytest.fixture(scope="session")
def records30(records200):
    return records200[:30]


@pytest.fixture(scope="session")
def category_vocab(gen_cfg):
    return gen_cfg.categories


@pytest.fixture(scope="session")
def token_vocab(records200):
    return build_token_vocab(records200)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(dim=32, heads=4, k1=6, k2=6, dim_2d=16, dropout=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
