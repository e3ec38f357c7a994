import pytest

_ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance line; call as ``verdict(number, ok, detail)``."""

    def record(number, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
