"""Shared pytest wiring.

test_acceptance.py appends one PASS/FAIL line per criterion here; the hook
prints them as a scorecard block at the end of the terminal report.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance scorecard")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
