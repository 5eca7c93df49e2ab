import pytest

_RESULTS = {}
_NOTES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _RESULTS[number] = (status, title)
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            _NOTES.setdefault(number, []).append(report.longrepr[2].removeprefix("Skipped: "))


@pytest.fixture
def note(request):
    """Attach a line of detail to this criterion's summary entry."""
    marker = request.node.get_closest_marker("acceptance")
    return lambda text: _NOTES.setdefault(marker.args[0], []).append(text)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title = _RESULTS[number]
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}")
        for text in _NOTES.get(number, []):
            for line in text.splitlines():
                terminalreporter.write_line(f"         {line}")
