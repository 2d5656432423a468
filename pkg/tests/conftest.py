from collections import defaultdict

import pytest

_outcomes = defaultdict(list)
_labels = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, label): acceptance criterion a test belongs to")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    number, label = mark.args
    _labels[number] = label
    _outcomes[number].append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status = "PASS" if all(_outcomes[number]) else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {number:2d}: {_labels[number]}")


@pytest.fixture
def report(request, record_property):
    """Record a measured quantity in the junit properties and echo it in the log."""
    def emit(name, value):
        record_property(name, value)
        print(f"{request.node.name}: {name} = {value}")
    return emit
