import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo checks")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(20250810)
