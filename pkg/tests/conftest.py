from pathlib import Path

import numpy as np
import pytest

from adrd.imageio import read_png

DATA = Path(__file__).parent / "data"
TEST_IMAGES = ("astronaut", "coffee", "chelsea", "rocket", "hubble")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def test_images() -> dict[str, np.ndarray]:
    return {name: read_png(DATA / f"{name}.png") for name in TEST_IMAGES}


@pytest.fixture(scope="session")
def overfit_image() -> np.ndarray:
    return read_png(DATA / "overfit64.png")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
