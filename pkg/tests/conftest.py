import time
from pathlib import Path

import numpy as np
import pytest

from cfx.datasets import generate_cbf, load_dataset
from cfx.series import z_normalize
from cfx.training import TrainConfig, train

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).resolve().parent / "fixtures"
ITALY = ROOT / "data" / "ItalyPowerDemand"


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cbf_desk():
    """Desk-scale CBF: 300 train / 150 test, T=64, normalized with train statistics."""
    return z_normalize(generate_cbf(length=64, per_class=100, seed=7, test_per_class=50))


@pytest.fixture(scope="session")
def cbf_training(cbf_desk):
    """(model, report, wall seconds) for the desk CBF classifier."""
    t0 = time.perf_counter()
    model, report = train(cbf_desk, TrainConfig(seed=7))
    return model, report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def cbf_model(cbf_training):
    return cbf_training[:2]


@pytest.fixture(scope="session")
def italy():
    if not ITALY.is_dir():
        pytest.skip("ItalyPowerDemand archive files not present")
    return z_normalize(load_dataset(ITALY))


@pytest.fixture(scope="session")
def italy_model(italy):
    return train(italy, TrainConfig(seed=7))
