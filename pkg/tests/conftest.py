"""Shared pytest configuration.

Acceptance tests record one verdict line per criterion through the
``acceptance_report`` fixture; the lines are repeated in a terminal summary
section so they survive output capturing.
"""

import pytest

_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    def report(criterion, status, text):
        line = f"ACCEPTANCE {criterion:<4} {status:<4} {text}"
        _LINES.append(line)
        print(line)
        return line

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
