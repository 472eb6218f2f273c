"""Prints one pass/fail line per acceptance criterion after the run."""

_verdicts = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        status = "PASS" if report.passed else "FAIL"
        _verdicts.append((props["criterion"], status, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(_verdicts, key=lambda v: int(v[0].split()[0])):
        terminalreporter.write_line(f"[{status}] criterion {name}: {detail}")
