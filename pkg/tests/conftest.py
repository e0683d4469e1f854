import numpy as np
import pytest

from esmer.config import parse_config

ACCEPTANCE_LINES = pytest.StashKey[list]()
from esmer.streams import SampleSet


def small_config(**overrides):
    """Tiny Class-IL config (2 tasks x 2 classes) for fast harness tests."""
    d = {
        "source": {"num_classes": 4, "dim": 8, "train_per_class": 40, "test_per_class": 20},
        "stream": {"n_tasks": 2},
        "hyper": {"epochs_per_task": 2, "buffer_capacity": 20, "batch_size": 16,
                  "memory_batch_size": 8},
        "network": {"hidden_dims": [16]},
        "seeds": [0],
        "probes": {"drift_every": 2, "purity_every": 10},
    }
    for key, val in overrides.items():
        if isinstance(val, dict):
            d.setdefault(key, {}).update(val)
        else:
            d[key] = val
    return parse_config(d)


def toy_samples(n, dim=3, noisy_every=0, seed=0):
    rng = np.random.default_rng(seed)
    noisy = np.zeros(n, dtype=bool)
    if noisy_every:
        noisy[::noisy_every] = True
    labels = rng.integers(0, 2, n)
    return SampleSet(np.arange(n), rng.standard_normal((n, dim)), labels, labels, noisy)


@pytest.fixture
def cfg_factory():
    return small_config


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("]")[1].split(".")[0])):
            terminalreporter.write_line(line)
