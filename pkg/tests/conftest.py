import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record the outcome of a numbered acceptance criterion."""

    def record(number, title, ok, detail=""):
        _CRITERIA[number] = (title, bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}: {detail}")
