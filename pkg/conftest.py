from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.measures.spectral import SpectralMeasure, semicircle_density  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="n = 1000..4000 のモンテカルロも回す")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 大きい n のモンテカルロ（--runslow のときだけ）")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="--runslow が必要")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# -------------------
# measures
# -------------------

@pytest.fixture(scope="session")
def two_atom() -> SpectralMeasure:
    # ½(δ_1 + δ_3)
    return SpectralMeasure.atomic([(1.0, 0.5), (3.0, 0.5)])


@pytest.fixture(scope="session")
def delta1() -> SpectralMeasure:
    return SpectralMeasure.point_mass(1.0)


@pytest.fixture(scope="session")
def semicircle() -> SpectralMeasure:
    # 台 [1, 3]、平方根の端
    return semicircle_density(2.0, 1.0)


@pytest.fixture(scope="session")
def coarse_semicircle() -> SpectralMeasure:
    # 格子全体の密度を何度も解くテスト用
    return semicircle_density(2.0, 1.0, points=201)
