import oracles


def pytest_terminal_summary(terminalreporter):
    lines = oracles.ACCEPTANCE
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
