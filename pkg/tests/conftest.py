"""Shared pytest wiring: replay acceptance result lines in the summary."""

from __future__ import annotations

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance results")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
