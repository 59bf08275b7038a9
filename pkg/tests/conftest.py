import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line: ``criterion(n, ok, detail)`` then assert ``ok``."""

    def record(n, ok, detail):
        line = f"ACCEPTANCE {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((n, line))
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
