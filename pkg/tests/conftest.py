import pytest

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def report_criterion():
    def record(key: str, passed: bool, detail: str) -> None:
        line = f"{key}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[key] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        # single-digit criterion numbers, so a plain string sort is in order
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
