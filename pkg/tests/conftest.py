import pytest

_RESULTS = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(n, ok, detail); returns ok."""

    def record(n, ok, detail=""):
        _RESULTS.append((n, bool(ok), detail))
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
