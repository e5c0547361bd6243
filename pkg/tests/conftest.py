"""
Fixtures partagees : configuration et jeu de donnees miniatures.
Les tests d'acceptation longs sont marques `slow` et ne tournent qu'avec --runslow.
"""

import numpy as np
import pytest

from benchmark import build_dataset
from config import merge
from gradcheck import miniature_config


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="Lance aussi les verifications de bout en bout sur plusieurs graines")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="necessite --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_cfg() -> dict:
    """Images 8x8, 2 connus + 2 nouveaux, 6 echantillons par classe."""
    return merge(miniature_config(0), {
        "data.novel_generators": 2,
        "data.samples_per_class": 6,
        "data.identities": 4,
        "train.epochs": 1,
        "train.batch_size": 4,
        "eval.kmeans_restarts": 2,
    })


@pytest.fixture
def tiny_dataset(tiny_cfg):
    return build_dataset(tiny_cfg)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
