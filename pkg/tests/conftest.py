"""Shared pytest hooks.

The acceptance tests register one verdict line each; the hook below echoes
them through the terminal reporter so a plain ``pytest -v`` run ends with a
visible PASS/FAIL line per acceptance criterion, whether or not output
capture is active.
"""

_verdicts = []


def record_criterion(line: str) -> None:
    _verdicts.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
