import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for the acceptance summary; call before asserting."""

    def record(label: str, passed: bool, detail: str) -> bool:
        _RESULTS.append((label, bool(passed), detail))
        print(f"{label}: {'PASS' if passed else 'FAIL'} | {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{label}: {'PASS' if passed else 'FAIL'} | {detail}")
