"""Comparison policies: uniform random, round-robin MAC, and the app-only learner."""
from __future__ import annotations

import numpy as np

from .agent import Learner
from .domain import APP_ACTIONS, CPU_ACTIONS, ActionVector, AppDecision, Observation

DEFAULT_CPU_LEVEL = 1


def random_policy(obs: Observation, rng: np.random.Generator, num_channels: int) -> ActionVector:
    """Uniform over each head independently."""
    return ActionVector(int(rng.integers(APP_ACTIONS)), int(rng.integers(num_channels)),
                        int(rng.integers(CPU_ACTIONS)))


def round_robin_mac(step: int, agent_id: int, num_channels: int) -> int:
    if num_channels < 1:
        raise ValueError(f"need at least one channel, got {num_channels}")
    return (agent_id + step) % num_channels


def least_used_channel(channel_loads) -> int:
    """Index of the smallest load; ties go to the lowest index."""
    return int(np.argmin(np.asarray(channel_loads)))


class RandomPolicy:
    """Uniform random actions from a per-agent stream."""

    def __init__(self, agent_id: int, num_channels: int, rng: np.random.Generator):
        self.agent_id = agent_id
        self.num_channels = num_channels
        self.rng = rng

    def begin_episode(self):
        pass

    def act(self, obs: Observation, step: int, loads, explore: bool = True) -> ActionVector:
        return random_policy(obs, self.rng, self.num_channels)


class RoundRobinPolicy:
    """Always offload on the round-robin channel at the default CPU level."""

    def __init__(self, agent_id: int, num_channels: int):
        self.agent_id = agent_id
        self.num_channels = num_channels
        self.cursor = round_robin_mac(0, agent_id, num_channels)

    def begin_episode(self):
        self.cursor = round_robin_mac(0, self.agent_id, self.num_channels)

    def act(self, obs: Observation, step: int, loads, explore: bool = True) -> ActionVector:
        self.cursor = round_robin_mac(step, self.agent_id, self.num_channels)
        return ActionVector(int(AppDecision.OFFLOAD), self.cursor, DEFAULT_CPU_LEVEL)


class AppOnlyPolicy:
    """Learned offload decision; channel and CPU come from fixed heuristics.

    Wraps a ``Learner`` restricted to the app head, so TD updates never
    touch the MAC or CPU outputs.
    """

    def __init__(self, learner: Learner):
        self.learner = learner
        self.agent_id = learner.agent_id

    def begin_episode(self):
        self.learner.begin_episode()

    def act(self, obs: Observation, step: int, loads, explore: bool = True) -> ActionVector:
        q_app, _, _ = self.learner.q_values(obs)
        eps = self.learner.epsilon if explore else 0.0
        if eps > 0 and self.learner.rng.random() < eps:
            app = int(self.learner.rng.integers(APP_ACTIONS))
        else:
            app = int(np.argmax(q_app))
        return ActionVector(app, least_used_channel(loads), DEFAULT_CPU_LEVEL)


def app_only_learner(policy: AppOnlyPolicy, obs: Observation, loads) -> ActionVector:
    """Greedy app-only action for ``obs`` given the current channel loads."""
    return policy.act(obs, 0, loads, explore=False)
