"""Collects acceptance-criterion outcomes and prints one line per criterion."""
from collections import defaultdict

_outcomes = defaultdict(list)
_titles = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            k = mark.args[0]
            _titles[k] = mark.kwargs.get("title", item.name)
            item.user_properties.append(("criterion", k))


def pytest_runtest_logreport(report):
    k = dict(report.user_properties).get("criterion")
    if k is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[k].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_outcomes):
        ok = all(o == "passed" for o in _outcomes[k])
        terminalreporter.write_line(f"CRITERION {k:2d} {'PASS' if ok else 'FAIL'}  {_titles.get(k, '')}")
