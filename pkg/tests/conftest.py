import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion_report():
    """Record one summary line per acceptance criterion: ``report(n, passed, detail)``."""

    def report(number: int, passed: bool, detail: str) -> None:
        _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_CRITERIA[number])

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
