"""Shared fixtures, plus the one-line-per-criterion acceptance summary."""

import pytest

_RESULTS = {}  # nodeid -> [number, title, details, outcome]


class Gate:
    """Collects named sub-checks for one acceptance criterion."""

    def __init__(self, entry):
        self._entry = entry
        self.failures = []

    def check(self, name, ok, detail):
        self._entry[2].append(f"{name}={detail}")
        if not ok:
            self.failures.append(f"{name}: {detail}")

    def finish(self):
        assert not self.failures, "; ".join(self.failures)


@pytest.fixture
def gate(request):
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    entry = _RESULTS.setdefault(request.node.nodeid, [number, title, [], "not run"])
    return Gate(entry)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    entry = _RESULTS.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or report.outcome != "passed":
        entry[3] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, details, outcome in sorted(_RESULTS.values()):
        terminalreporter.write_line(f"criterion {number} {outcome:4s} {title}: {', '.join(details)}")
