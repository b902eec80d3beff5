import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def micro_scene():
    from stvmlu.synthgen import make_scene

    return make_scene(16, 16, 3, 20.0, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not (mod.RESULTS or mod.SUMMARY):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.SUMMARY:
        terminalreporter.write_line(line)
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
