"""Shared pytest hooks: the acceptance summary block.

Tests marked ``@pytest.mark.criterion(n, "label")`` are grouped by
number; the terminal summary prints one PASS/FAIL line per criterion
so the release checklist can be read off a full run directly.
"""

import collections

_BY_NODE = {}
_RESULTS = collections.defaultdict(
    lambda: {"label": "", "passed": 0, "failed": 0})


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, label): groups a test under one acceptance "
        "criterion for the summary block")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _BY_NODE[item.nodeid] = (int(marker.args[0]),
                                     str(marker.args[1]))


def pytest_runtest_logreport(report):
    tagged = _BY_NODE.get(report.nodeid)
    if tagged is None:
        return
    num, label = tagged
    entry = _RESULTS[num]
    entry["label"] = label
    if report.failed:
        # setup errors and call failures both sink the criterion
        entry["failed"] += 1
    elif report.when == "call" and report.passed:
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        entry = _RESULTS[num]
        verdict = "PASS" if entry["failed"] == 0 and entry["passed"] else \
            "FAIL"
        terminalreporter.write_line(
            f"criterion {num}: {verdict}  {entry['label']} "
            f"({entry['passed']} checks)")
