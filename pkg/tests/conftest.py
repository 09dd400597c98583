import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from integrable import catalog_path

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def catalog():
    return lambda name: str(catalog_path(name))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
