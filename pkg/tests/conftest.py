import numpy as np
import pytest

from lesionkit.synthetic import make_corpus

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(n=24, size=64, seed=3)


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path
