"""Collects one PASS/FAIL verdict per acceptance criterion and prints them at the end of the run."""

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    failed = call.excinfo is not None
    if failed and not detail:
        detail = call.excinfo.exconly().splitlines()[0][:160]
    _VERDICTS[n] = ("FAIL" if failed else "PASS", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        verdict, title, detail = _VERDICTS[n]
        terminalreporter.write_line(f"{verdict} {n}. {title}: {detail}")
