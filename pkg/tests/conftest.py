"""Shared pytest plumbing: surface acceptance-battery lines in the summary."""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance battery")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
