import pytest

_results: list[tuple[int, str, str, float, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    note = getattr(item, "acceptance_note", "")
    _results.append((number, title, "PASS" if report.passed else "FAIL", report.duration, note))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, verdict, duration, note in sorted(_results):
        line = f"[{verdict}] criterion {number:>2}: {title} ({duration:.1f} s)"
        terminalreporter.write_line(line + (f" -- {note}" if note else ""))


@pytest.fixture
def note(request):
    """Attach a short measurement summary to the acceptance line."""

    def _set(text: str) -> None:
        request.node.acceptance_note = text

    return _set
