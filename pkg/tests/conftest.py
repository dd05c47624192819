import pytest

ACCEPTANCE_RESULTS = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test body calls it with the verdict."""

    def record(number, text, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {text}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_RESULTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)
