import numpy as np
import pytest

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class AcceptanceRecorder:
    """Collects one verdict per acceptance criterion for the terminal summary."""

    def record(self, number: int, title: str, checks: dict[str, bool], detail: str = "") -> bool:
        ok = all(checks.values())
        failed = [name for name, passed in checks.items() if not passed]
        note = detail if ok else f"failed: {', '.join(failed)}; {detail}"
        _ACCEPTANCE[number] = (title, ok, note)
        print(f"[criterion {number}] {'PASS' if ok else 'FAIL'} {title} ({note})")
        return ok


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, note = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  [{note}]")
