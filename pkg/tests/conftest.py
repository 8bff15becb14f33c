import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rcdlab.model import Model  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def ou401():
    return Model.build("ou401")


@pytest.fixture(scope="session")
def ou201():
    return Model.build("ou")


@pytest.fixture(scope="session")
def two_point():
    return Model.build("two-point")


@pytest.fixture(scope="session")
def circle():
    return Model.build("circle")


@pytest.fixture(scope="session")
def quartic():
    return Model.build("interval:quartic")


@pytest.fixture(scope="session")
def ou_wide():
    return Model.build({"kind": "ou", "N": 401, "domain": [-8.0, 8.0], "name": "ou-wide"})


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
