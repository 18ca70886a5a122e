import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record a named acceptance outcome; the summary prints one line per criterion."""

    def report(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
