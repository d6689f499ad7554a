from __future__ import annotations

import pytest
from hypothesis import settings

# multi-thousand-bit arithmetic makes per-example timing noisy
settings.register_profile("itpfi", deadline=None)
settings.load_profile("itpfi")

_RESULTS: dict[int, tuple[bool, str]] = {}


class AcceptanceLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, number: int, ok: bool, detail: str) -> None:
        _RESULTS[number] = (ok, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="session")
def acceptance() -> AcceptanceLog:
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        ok, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
