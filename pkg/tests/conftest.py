import pytest

RESULTS = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (ok, detail); the test still asserts on its own."""
    def record(ok, detail=""):
        RESULTS.append((request.node.name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {request.node.name}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
