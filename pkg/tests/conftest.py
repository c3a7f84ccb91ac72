"""Collects acceptance-criterion outcomes and prints one line per criterion."""
from collections import defaultdict

_OUTCOMES: dict = defaultdict(list)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    if call.excinfo is None:
        outcome = "PASS"
    elif item.get_closest_marker("xfail") is not None:
        outcome = "FAIL (expected: not attainable as stated)"
    else:
        outcome = "FAIL"
    _OUTCOMES[marker.args[0]].append((item.name, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        for name, outcome in _OUTCOMES[n]:
            terminalreporter.write_line(f"criterion {n:>2}: {outcome}  [{name}]")
