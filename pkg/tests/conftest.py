from __future__ import annotations

import pytest

#: criterion number -> (title, [(label, passed, detail)])
_CRITERIA: dict[int, tuple[str, list]] = {}


@pytest.fixture
def criterion():
    """Record sub-checks of an acceptance criterion for the end-of-run summary."""

    def record(number: int, title: str, checks: list) -> None:
        _, old = _CRITERIA.get(number, (title, []))
        _CRITERIA[number] = (title, old + list(checks))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, checks = _CRITERIA[number]
        ok = bool(checks) and all(c[1] for c in checks)
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title} "
                      f"({sum(c[1] for c in checks)}/{len(checks)} checks)")
        for label, passed, detail in checks:
            if not passed:
                tr.write_line(f"    failed: {label}: {detail}")
