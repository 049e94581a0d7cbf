import numpy as np
import pytest

_OUTCOMES: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        previous = _OUTCOMES.get(label, ("PASS", title))[0]
        status = "FAIL" if failed or previous == "FAIL" else "PASS"
        _OUTCOMES[label] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_OUTCOMES, key=lambda s: int(s[2:])):
        status, title = _OUTCOMES[label]
        terminalreporter.write_line(f"{status} {label} {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
