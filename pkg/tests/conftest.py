"""Shared pytest plumbing: collects acceptance verdict lines and echoes
them in the terminal summary so they are visible without -s."""

from __future__ import annotations


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
