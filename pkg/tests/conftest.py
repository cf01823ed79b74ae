import sys
from pathlib import Path

import pytest

# lets test modules import the shared helpers (oracles, pipeline) directly
sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class AcceptanceReport:
    def record(self, number: int, title: str, checks: dict[str, bool], detail: str = "") -> None:
        ok = all(checks.values())
        failed = [name for name, passed in checks.items() if not passed]
        if failed:
            detail = f"{detail}; failed: {', '.join(failed)}" if detail else f"failed: {', '.join(failed)}"
        _ACCEPTANCE[number] = (title, ok, detail)
        print(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        assert ok, f"criterion {number} failed: {', '.join(failed)}"


@pytest.fixture(scope="session")
def acceptance() -> AcceptanceReport:
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
