import pytest

from endoscan.phantom import make_texture


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def _report(criterion, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        request.config.acceptance_lines[str(criterion)] = line
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])


@pytest.fixture(scope="session")
def texture():
    return make_texture(seed=11, extent_mm=1.2)
