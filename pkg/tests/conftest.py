import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oobtoken.keys import KeyRegistry  # noqa: E402
from oobtoken.tokens import CanonicalAddress  # noqa: E402

_acceptance = []


@pytest.fixture
def nonces():
    return random.Random(1234).randbytes


@pytest.fixture
def registry():
    return KeyRegistry(random.Random(99).randbytes)


@pytest.fixture
def alice():
    return CanonicalAddress.parse("192.0.2.7")


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_criterion_" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _acceptance.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance, key=lambda x: int(x[0].split("_")[2])):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
