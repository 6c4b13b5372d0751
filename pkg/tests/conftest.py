import pytest

_REPORT: list[tuple[int, bool, str]] = []


class AcceptanceReport:
    def record(self, criterion: int, passed: bool, detail: str) -> bool:
        _REPORT.append((criterion, bool(passed), detail))
        return bool(passed)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_REPORT, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
