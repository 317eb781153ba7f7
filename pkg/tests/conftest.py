import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20221014)


def distinct_points(rng, M, D, scale=1.0):
    """Random points with pairwise distances bounded away from zero."""
    while True:
        X = rng.uniform(-scale, scale, size=(M, D))
        if M < 2:
            return X
        d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
        if d[np.triu_indices(M, 1)].min() > 0.1 * scale * M ** (-1.0 / D):
            return X


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance_lines(request):
    return request.config.acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
