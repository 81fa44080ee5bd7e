import numpy as np
import pytest

_RESULTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = []


@pytest.fixture
def record(request):
    """Log one acceptance criterion outcome for the terminal summary."""
    results = request.config.stash[_RESULTS_KEY]

    def _record(criterion, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        if passed is None:
            status = "SKIP"
        results.append(f"[{status}] {criterion}: {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_RESULTS_KEY]
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
