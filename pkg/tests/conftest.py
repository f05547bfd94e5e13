import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; printed live and again in the summary."""

    def record(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {name}: {detail}"
        _CRITERIA.append((number, line))
        sys.__stdout__.write("\n" + line + "\n")
        sys.__stdout__.flush()
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)
