import numpy as np
import pytest

from drmanifold.config import desk_pipeline
from drmanifold.env import sine_environment
from drmanifold.pipeline import PipelineConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sine_env():
    return sine_environment(ambient_dim=10, rotation_seed=0, noise_sigma=0.5)


@pytest.fixture(scope="session")
def desk_config():
    return PipelineConfig.from_dict(desk_pipeline())


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion: ``criterion(number, title, passed, detail)``."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
        store[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_CRITERIA, {})
    if store:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
