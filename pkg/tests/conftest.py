import criteria


def pytest_terminal_summary(terminalreporter):
    if not criteria.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria.RESULTS):
        terminalreporter.write_line(criteria.RESULTS[number])
