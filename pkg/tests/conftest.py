import pytest

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def record_criterion():
    """Store one acceptance line: (number, title, status, detail)."""

    def record(number: int, title: str, passed: bool | None, detail: str = "") -> None:
        status = "SKIPPED" if passed is None else ("PASS" if passed else "FAIL")
        _ACCEPTANCE[number] = (title, status, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
