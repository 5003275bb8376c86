"""Prints one PASS/FAIL line per acceptance criterion after the run.

The acceptance tests are named test_cNN_*; their docstring first line is
the human description. Results are collected during the run and emitted
in the terminal summary, which pytest does not capture, so the lines are
visible in plain `pytest -v` output.
"""

import re

_CRITERION = re.compile(r"::test_c(\d+)_")

_titles = {}
_results = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if "test_acceptance" not in item.nodeid:
            continue
        match = _CRITERION.search(item.nodeid)
        if match:
            doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
            _titles[item.nodeid] = (int(match.group(1)), doc)


def pytest_runtest_logreport(report):
    info = _titles.get(report.nodeid)
    if info is None:
        return
    number, title = info
    if report.when != "call" and report.outcome != "failed":
        return
    prior = _results.get(number)
    if prior is not None and prior[0] == "failed":
        return  # a setup/call failure must not be shadowed by teardown
    _results[number] = (report.outcome, title)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    words = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for number in sorted(_results):
        outcome, title = _results[number]
        terminalreporter.write_line(
            "criterion %2d: %s  %s"
            % (number, words.get(outcome, outcome.upper()), title))
