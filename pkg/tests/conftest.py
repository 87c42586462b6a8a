import pytest

_results: dict[int, tuple[set, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    seen, _ = _results.setdefault(number, (set(), title))
    if report.failed:
        seen.add("FAIL")
    elif report.skipped:
        seen.add("SKIP")
    elif report.when == "call":
        seen.add("PASS")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        seen, title = _results[number]
        status = next(s for s in ("FAIL", "PASS", "SKIP") if s in seen)
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")
