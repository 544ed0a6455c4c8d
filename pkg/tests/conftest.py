"""Shared fixtures; collects acceptance outcomes and prints one line per criterion."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "oracle equivalence of the exact fast path",
    2: "unbiasedness of the trace estimators",
    3: "normality of the standardized score",
    4: "FAR reproduction and DR trend",
    5: "LR inapplicability pattern",
    6: "CLR two-path consistency and f symmetry",
    7: "end-to-end detection and localization",
    8: "complexity scaling",
    9: "principal-term approximation bound",
    10: "CLI determinism",
}

_results: dict = {}


@pytest.fixture
def criterion():
    """Record ``(number, ok, detail)`` for the acceptance summary."""

    def record(number: int, ok: bool, detail: str = "") -> bool:
        _results.setdefault(number, []).append((bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        rows = _results.get(n)
        if rows is None:
            tr.write_line(f"criterion {n:2d} NOT RUN  {title}")
            continue
        status = "PASS" if all(ok for ok, _ in rows) else "FAIL"
        details = "; ".join(d for ok, d in rows if d and (status == "PASS" or not ok))
        tr.write_line(f"criterion {n:2d} {status}  {title}: {details}")
