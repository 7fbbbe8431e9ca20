import re

_CRITERION_RE = re.compile(r"test_c(\d+)_([a-z0-9_]+)")
_results: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    m = _CRITERION_RE.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    name = m.group(2)
    outcome = "PASS" if report.passed else "FAIL"
    # Keep the worst outcome if a criterion maps to several tests.
    if _results.get(num, ("", "PASS"))[1] != "FAIL":
        _results[num] = (name, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tw = terminalreporter
    tw.write_sep("=", "acceptance criteria")
    for num in sorted(_results):
        name, outcome = _results[num]
        tw.write_line(f"criterion {num:2d} {name:<42} {outcome}")
