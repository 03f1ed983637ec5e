import os
import pathlib

import numpy as np
import pytest

from ocl.data.idx import mnist_available

ROOT = pathlib.Path(__file__).resolve().parents[1]
DATA_ROOT = os.environ.get("OCL_DATA_ROOT")


def pytest_collection_modifyitems(config, items):
    # slow tests need the real MNIST files
    if mnist_available(DATA_ROOT):
        return
    skip = pytest.mark.skip(reason="MNIST not found under $OCL_DATA_ROOT")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
