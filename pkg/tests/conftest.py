"""Pytest wiring: collect acceptance-criterion outcomes into a scorecard."""

ACCEPTANCE_RESULTS = {}


def record_criterion(number, title, ok, detail):
    """Store one criterion outcome; called before the test asserts."""
    ACCEPTANCE_RESULTS[number] = (title, bool(ok), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        word = "PASS" if ok else "FAIL"
        terminalreporter.write_line(
            f"criterion {number} [{word}] {title}: {detail}")
