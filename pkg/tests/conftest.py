import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repsim",
    max_examples=100,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repsim")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gaussian(seed, n, d):
    return np.random.default_rng(seed).standard_normal((n, d))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
