import numpy as np
import pytest

from shortlink.geometry import build_ap_layout, place_sta


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ap():
    return build_ap_layout(16, 4, 0.005, 0.20)


@pytest.fixture(scope="session")
def sta(ap):
    return place_sta(ap, 0.8, 0.0, 0.0, 16, 0.04)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
