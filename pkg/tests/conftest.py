import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lanegeo.synth import SceneConfig, generate_scene

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scene():
    return generate_scene(SceneConfig(seed=2024), 0)


@pytest.fixture(scope="session")
def ground_scene():
    return generate_scene(SceneConfig(seed=2024, ground_observations=True), 0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
