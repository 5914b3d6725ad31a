import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

_REPORT = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def report(number, passed, detail):
        _REPORT.append((number, bool(passed), detail))
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_REPORT, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
