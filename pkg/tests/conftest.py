"""Prints one pass/fail line per acceptance criterion at the end of the run."""

import re

_LINES = []


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m or not (report.when == "call" or report.outcome != "passed"):
        return
    detail = "; ".join(str(v) for k, v in report.user_properties if k == "measured")
    status = "PASS" if report.passed else "FAIL"
    _LINES.append(f"criterion {int(m.group(1)):>2} {status}  {m.group(2)}"
                  + (f"  [{detail}]" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
