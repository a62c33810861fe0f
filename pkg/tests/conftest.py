import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def emit(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = f"[criterion {number:>2}] {'PASS' if passed else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert passed, line

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
