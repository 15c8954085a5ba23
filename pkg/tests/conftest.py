import acclog


def pytest_terminal_summary(terminalreporter):
    if not acclog.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acclog.RESULTS):
        terminalreporter.write_line(acclog.RESULTS[n])
