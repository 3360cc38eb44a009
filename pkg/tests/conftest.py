import pytest

ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion for the summary block.

    The test sets ``record["detail"]``; the status comes from the test result.
    """
    record = {"detail": ""}
    yield record
    rep = getattr(request.node, "rep_call", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    ACCEPTANCE_LINES[request.node.name] = f"{status}  {request.node.name}: {record['detail']}"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for name in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[name])
