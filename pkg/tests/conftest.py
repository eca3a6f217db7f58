"""Shared pytest plumbing: acceptance criterion result lines.

test_acceptance.py appends one "PASS/FAIL criterion N" line per check;
they are echoed in a dedicated section of the terminal summary so the
verdicts are visible even though pytest captures test stdout.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
