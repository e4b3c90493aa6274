import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# Filled by tests/test_acceptance.py: criterion number -> (passed, summary line).
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, line = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status:4s} {line}")
