import pytest

CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for the acceptance summary, then assert."""

    def record(number, ok, detail):
        CRITERIA[str(number)] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA, key=lambda n: (int(n.rstrip("ab")), n)):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>3}: {'PASS' if ok else 'FAIL'}  {detail}")
