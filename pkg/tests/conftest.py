import pytest

_REPORT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT_KEY] = []


@pytest.fixture
def acceptance(request):
    """Call with (number, passed, detail) to record one acceptance line."""
    lines = request.config.stash[_REPORT_KEY]

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        lines.append((number, f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}  [{detail}]"))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
