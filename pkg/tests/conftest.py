"""Shared pytest wiring: a summary block for the acceptance checks.

Tests marked ``@pytest.mark.acceptance(num, label)`` get one PASS/FAIL line
per criterion number at the end of the run, aggregated over every test
carrying that number.
"""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, label): end-to-end acceptance check, one summary "
        "line per criterion number",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when == "teardown":
        return
    num, label = marker.args
    entry = _RESULTS.setdefault(num, {"label": label, "failed": False, "skipped": False})
    if report.failed:
        entry["failed"] = True
    elif report.skipped:
        entry["skipped"] = True


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_RESULTS):
        entry = _RESULTS[num]
        verdict = "FAIL" if entry["failed"] else ("SKIP" if entry["skipped"] else "PASS")
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {entry['label']}")
