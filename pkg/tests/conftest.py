from __future__ import annotations

import numpy as np
import pytest

from helpers import make_cal, make_geometry


@pytest.fixture
def geometry():
    return make_geometry()


@pytest.fixture
def cal(tmp_path):
    return make_cal(directory=str(tmp_path))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
