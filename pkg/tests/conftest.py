import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_registry


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_registry.ran_any():
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria", sep="=")
    for line in acceptance_registry.lines():
        terminalreporter.write_line(line)
