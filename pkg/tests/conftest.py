import pytest

CRITERIA = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def lines(request):
    """Acceptance result lines, repeated in the terminal summary."""
    return request.config.stash.setdefault(CRITERIA, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    out = config.stash.get(CRITERIA, [])
    if out:
        terminalreporter.section("acceptance criteria")
        for line in sorted(out, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
