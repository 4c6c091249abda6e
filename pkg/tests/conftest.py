import numpy as np
import pytest

from fermi6g.config import TrainingConfig
from fermi6g.env import EdgeEnvironment
from fermi6g.network import QNetwork


@pytest.fixture
def small_config() -> TrainingConfig:
    """A few agents, a handful of short episodes, a tiny network."""
    return TrainingConfig(
        num_agents=3, num_channels=2, steps=5, episodes=4, buffer=50, batch=4,
        sequence_length=5, hidden_size=4, agg_interval=2, sync_freq=3, seed=11,
    )


@pytest.fixture
def env(small_config) -> EdgeEnvironment:
    return EdgeEnvironment(small_config).reset(7)


@pytest.fixture
def tiny_network() -> QNetwork:
    return QNetwork(hidden_size=3, num_channels=2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
