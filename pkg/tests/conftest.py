import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _isolated_output(tmp_path, monkeypatch):
    """CLI runs write into a per-test directory."""
    monkeypatch.setenv("PHC_PURCELL_OUT", str(tmp_path / "out"))


@pytest.fixture
def acceptance_lines(request):
    return request.config.stash.setdefault(_LINES, [])


_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
