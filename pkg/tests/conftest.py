import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion_line():
    def record(number, passed, detail):
        line = f"CRITERION {number:>3}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[str(number)] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
