import pytest

_RESULTS: dict[int, str] = {}


@pytest.fixture
def criterion(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and fail the test if it did not pass."""

    def record(number: int, ok: bool, detail: str):
        line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}  {detail}"
        _RESULTS[number] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[n])
