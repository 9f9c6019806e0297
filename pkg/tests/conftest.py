import _verdicts


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts.lines:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts.lines:
            terminalreporter.write_line(line)
