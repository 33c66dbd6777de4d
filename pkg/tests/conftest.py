"""Shared pytest wiring: replay acceptance verdicts after capture ends."""

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not VERDICTS:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance verdicts", sep="-")
    for line in VERDICTS:
        terminalreporter.line(line)
