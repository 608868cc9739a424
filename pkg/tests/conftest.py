import numpy as np
import pytest

from spikeplace.data import PatchNormalizer, generate_synthetic_dataset
from spikeplace.modular import train_module
from spikeplace.params import SimulationParams


@pytest.fixture(scope="session")
def params():
    return SimulationParams()


@pytest.fixture(scope="session")
def small_params():
    return SimulationParams().replace(k_e=20, k_i=20)


@pytest.fixture(scope="session")
def two_patterns():
    a = np.zeros((28, 28))
    a[:, :14] = 255.0
    return np.stack([a.ravel(), a[:, ::-1].ravel()])


@pytest.fixture(scope="session")
def tiny_synthetic():
    ref, qry = generate_synthetic_dataset(8, 10.0, 0.0, seed=3)
    norm = PatchNormalizer()
    return norm.transform(ref.images), norm.transform(qry.images)


@pytest.fixture(scope="session")
def toy_module(small_params, tiny_synthetic):
    X, _ = tiny_synthetic
    return train_module(X[:4], np.arange(4), small_params, epochs=3, weight_seed=1, shuffle_seed=2)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
