"""Shared pytest plumbing: the acceptance-criteria summary block."""

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Collect one verdict line; printed after the run so it survives capture."""
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
