import logging
import os

import numpy as np
import pytest

from src.treeseg.application.data_generation_usecase import GenerationRequest, execute_generate_dataset
from src.treeseg.domain.taxonomy import default_taxonomy_path, load_taxonomy, taxonomy_from_dict
from src.treeseg.infrastructure.dataset_repository import DirectoryDatasetRepository

os.environ.setdefault("TESTING_MODE", "1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("TREESEG_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="esecuzione lunga: impostare TREESEG_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def test_logger():
    return logging.getLogger("TestLogger")


@pytest.fixture(scope="session")
def taxonomy_15():
    return load_taxonomy(default_taxonomy_path())


@pytest.fixture(scope="session")
def small_taxonomy():
    """4 specie, 2 generi, 1 taxon."""
    return taxonomy_from_dict(
        {
            "species": [
                {"name": "s0", "genus": "g0", "color": "#FF0000"},
                {"name": "s1", "genus": "g0", "color": "#00FF00"},
                {"name": "s2", "genus": "g1", "color": "#0000FF"},
                {"name": "s3", "genus": "g1"},
            ],
            "genera": [{"name": "g0", "taxon": "t0"}, {"name": "g1", "taxon": "t0"}],
            "taxa": [{"name": "t0", "category": "non_coniferous"}],
        }
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _generate(root, **overrides):
    request = GenerationRequest(**overrides)
    repository = DirectoryDatasetRepository(root)
    execute_generate_dataset(repository, request, logging.getLogger("TestGeneration"))
    return repository


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 tile 32×32, tutte nello split di addestramento."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    _generate(root, seed=3, tiles=8, height=32, width=32, crowns_range=(3, 5), min_count=1, split=False)
    return root


@pytest.fixture(scope="session")
def split_dataset(tmp_path_factory):
    """20 tile 32×32 su griglia 4×5, con bande train/val/test separate da buffer."""
    root = tmp_path_factory.mktemp("split_dataset")
    _generate(root, seed=5, tiles=20, height=32, width=32, crowns_range=(3, 5), min_count=1)
    return root
