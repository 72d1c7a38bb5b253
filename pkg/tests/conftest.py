import re
from collections import OrderedDict

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_outcomes: "OrderedDict[int, list]" = OrderedDict()
_titles: dict = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = _CRITERION.match(item.name)
        if m and item.get_closest_marker("acceptance"):
            num = int(m.group(1))
            doc = (item.function.__doc__ or "").strip().splitlines()
            _titles.setdefault(num, doc[0] if doc else item.name)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    if report.when == "call" or report.failed or report.skipped:
        _outcomes.setdefault(num, []).append(report.passed and report.when == "call")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_outcomes):
        ok = all(_outcomes[num])
        title = _titles.get(num, "")
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {title}")
