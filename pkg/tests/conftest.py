"""Shared fixtures: small configs, datasets and models that build in milliseconds."""
import numpy as np
import pytest

from symreg.backbone import BackboneConfig
from symreg.data import GenConfig, gen_dataset, split_by_counts
from symreg.model import build_model

TINY_DIMS = (8, 8, 4)
TINY_PLAN = (2, 3, 4, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return BackboneConfig(patch_dims=TINY_DIMS, channel_plan=TINY_PLAN)


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=3)


@pytest.fixture(scope="session")
def tiny_dataset():
    ds = gen_dataset(GenConfig(n_samples=40, dims=TINY_DIMS, seed=5))
    return split_by_counts(ds, (24, 8, 8), seed=5)


@pytest.fixture(scope="session")
def desk_dataset():
    """Default-sized patches, 60 pairs split 40/10/10."""
    ds = gen_dataset(GenConfig(n_samples=60, seed=11))
    return split_by_counts(ds, (40, 10, 10), seed=11)
