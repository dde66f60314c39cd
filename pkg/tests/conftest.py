"""Collects acceptance verdicts and prints them at the end of the run."""
import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """``verdict(criterion, passed, detail)`` records one acceptance line."""
    def record(criterion, passed, detail):
        _VERDICTS.append((criterion, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
