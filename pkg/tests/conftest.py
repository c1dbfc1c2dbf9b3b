import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meta3dseg import numerics  # noqa: E402


@pytest.fixture
def f64():
    with numerics.precision("float64"):
        yield


@pytest.fixture
def rng():
    return __import__("numpy").random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (slow desk-scale runs)")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
