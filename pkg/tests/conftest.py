import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest  # noqa: E402

# one line per acceptance criterion, printed in the terminal summary
_CRITERIA: dict[str, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    def record(name: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA.setdefault(name, []).append((bool(passed), detail))
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n[2:])):
        rows = _CRITERIA[name]
        ok = all(p for p, _ in rows)
        detail = "; ".join(d for _, d in rows if d)
        terminalreporter.write_line(f"{name:<5} {'PASS' if ok else 'FAIL'}  {detail}")
