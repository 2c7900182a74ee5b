"""Shared pytest wiring: the acceptance-criteria summary table.

Tests tagged ``@pytest.mark.criterion("A3", "...")`` feed a per-criterion
PASS/FAIL roll-up printed after the normal pytest summary. A criterion with
several tagged tests passes only if all of them pass; criteria whose tests
did not run in this invocation (deselected, filtered) are listed as not run.
"""

import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(code, title): tag a test as part of an acceptance criterion",
    )


def pytest_collection_modifyitems(config, items):
    # Register every criterion that was collected so ones whose tests never
    # execute still show up in the summary as NOT RUN.
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            code, title = marker.args
            _CRITERIA.setdefault(code, {"title": title, "ran": 0, "ok": True})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    code, title = marker.args
    entry = _CRITERIA.setdefault(code, {"title": title, "ran": 0, "ok": True})
    if report.when == "call":
        entry["ran"] += 1
        if report.outcome != "passed":
            entry["ok"] = False
    elif report.outcome == "failed":
        # A fixture blow-up never reaches the call phase; count it as a miss.
        entry["ran"] += 1
        entry["ok"] = False
    elif report.when == "setup" and report.skipped:
        entry["ran"] += 1
        entry["ok"] = False
        entry["title"] = title + " (skipped)"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.ensure_newline()
    tr.section("acceptance criteria", sep="-")
    for code in sorted(_CRITERIA):
        entry = _CRITERIA[code]
        if not entry["ran"]:
            status = "NOT RUN"
        elif entry["ok"]:
            status = "PASS"
        else:
            status = "FAIL"
        tr.write_line(f"{code}  {status:7s} {entry['title']}")
