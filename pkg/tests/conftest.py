import sys

import numpy as np
import pytest

from click3d.synthetic import two_cluster_scene


@pytest.fixture(scope="session")
def cluster_scene():
    return two_cluster_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def echo_command(*flags: str) -> str:
    return " ".join([sys.executable, "-m", "click3d.backends.echo", *flags])
