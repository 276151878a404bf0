import sys
from pathlib import Path

import pytest

# lets test modules import the shared numpy oracles
sys.path.insert(0, str(Path(__file__).parent))

_verdicts: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance check")


@pytest.fixture
def verdict(request):
    """Record ``verdict(passed, detail, soft=False)`` for the test's criterion."""
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args

    def record(passed: bool, detail: str, soft: bool = False) -> None:
        status = "PASS" if passed else ("SOFT-FAIL (reported only)" if soft else "FAIL")
        line = f"criterion {number} [{status}] {title}: {detail}"
        _verdicts[number] = line
        print(line)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call" and report.failed and marker.args[0] not in _verdicts:
        number, title = marker.args
        _verdicts[number] = f"criterion {number} [FAIL] {title}: raised {call.excinfo.typename}"


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        terminalreporter.write_line(_verdicts[number])
