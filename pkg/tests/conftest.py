"""Shared pytest plumbing.

The release-gate tests in test_acceptance.py register one verdict line per
criterion; printing them from a terminal-summary hook keeps them visible
even though pytest captures ordinary stdout.
"""

_VERDICT_LINES: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICT_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _VERDICT_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _VERDICT_LINES:
        terminalreporter.write_line(line)
