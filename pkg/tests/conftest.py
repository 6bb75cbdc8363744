"""Shared fixtures: desk-scale grids and cell-coordinate target builders."""
import numpy as np
import pytest

from src.core.types import GridConfig, TargetTruth
from src.scene.resources import select_resources

DF = 5e6
TO = 64e-6
FC = 5.9e9


def grid(n: int, m: int) -> GridConfig:
    return GridConfig(n, m, DF, TO, FC)


@pytest.fixture
def grid8():
    return grid(8, 8)


@pytest.fixture
def grid16():
    return grid(16, 16)


@pytest.fixture
def grid32():
    return grid(32, 32)


@pytest.fixture
def grid64():
    return grid(64, 64)


@pytest.fixture
def sparse_rs64(grid64):
    """η = 10 % elementwise on 64×64."""
    return select_resources(grid64, "elementwise", 0.1, seed=7)


@pytest.fixture
def cell_target():
    """TargetTruth at (u delay cells, w Doppler cells) of a grid."""
    def make(config: GridConfig, u: float, w: float, gain: complex = 1.0) -> TargetTruth:
        return TargetTruth(u * config.delay_cell, w * config.doppler_cell, gain)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
