"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import re
from collections import OrderedDict

CRITERIA = {
    1: "pooling oracle, idempotence, reversal duality",
    2: "finite-difference gradient suite",
    3: "closed-form radius vs brute force",
    4: "decode round trip",
    5: "focal loss hand values",
    6: "selection properties",
    7: "oracle end-to-end tracking",
    8: "toy overfit",
    9: "metrics values and monotonicity",
    10: "track determinism",
}

_outcomes: "OrderedDict[int, list[str]]" = OrderedDict()
_PATTERN = re.compile(r"test_criterion_(\d+)_")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(n, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if results is None:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {title}")
