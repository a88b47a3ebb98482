import numpy as np
import pytest

from lfkinetic.config import load_preset
from lfkinetic.dp import Mesh, value_iteration


@pytest.fixture(scope="session")
def test1_cfg():
    return load_preset("test1")


@pytest.fixture(scope="session")
def test2_cfg():
    return load_preset("test2")


@pytest.fixture(scope="session")
def small_test1_grid(test1_cfg):
    """9-node-per-axis value grid for the linear problem; fast to build."""
    mesh = Mesh(lo=-1.0, hi=1.0, n=9)
    return value_iteration(mesh, test1_cfg.controls, test1_cfg.cost,
                           test1_cfg.kernels, tol=1e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
