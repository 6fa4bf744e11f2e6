from __future__ import annotations

import pytest

# (criterion id, PASS/FAIL, detail) appended by tests/test_acceptance.py
ACCEPTANCE_LINES: list[tuple[str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, detail in sorted(ACCEPTANCE_LINES, key=lambda t: int(t[0][1:])):
        terminalreporter.write_line(f"{cid:>4} {status}  {detail}")


@pytest.fixture
def record_acceptance():
    def record(cid: str, passed: bool, detail: str) -> None:
        line = (cid, "PASS" if passed else "FAIL", detail)
        ACCEPTANCE_LINES.append(line)
        print(f"{cid} {line[1]}  {detail}")
    return record
