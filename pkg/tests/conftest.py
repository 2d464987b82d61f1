"""Shared test plumbing.

The acceptance tests report one line per criterion; collecting them here
and emitting them in the terminal summary keeps the lines visible in a
plain ``pytest -v`` run, where passing tests' stdout is swallowed.
"""

_criterion_lines: list[str] = []


def record_criterion(line: str) -> None:
    _criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.ensure_newline()
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)
