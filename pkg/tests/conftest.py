from __future__ import annotations

import pytest

# criterion number -> (description, list of outcomes)
_CRITERIA: dict[int, tuple[str, list[bool]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    entry = _CRITERIA.setdefault(number, (text, []))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry[1].append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        text, outcomes = _CRITERIA[number]
        status = "PASS" if outcomes and all(outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {text} ({sum(outcomes)}/{len(outcomes)} checks)")
