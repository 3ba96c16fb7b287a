import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# (criterion number, title, passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def record():
    def _record(number, title, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} :: {detail}"
        print(line)
        ACCEPTANCE.append((number, line))
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE, key=lambda t: (t[0], t[1])):
        terminalreporter.write_line(line)
