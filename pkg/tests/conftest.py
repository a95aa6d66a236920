import numpy as np
import pytest

from clbf.datagen import SyntheticSpec, generate_relation
from clbf.filter import dictionaries_from_relation

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_relation():
    return generate_relation(SyntheticSpec([12, 9, 30, 5], rows=150, seed=3))


@pytest.fixture(scope="session")
def small_dicts(small_relation):
    return dictionaries_from_relation(small_relation)
