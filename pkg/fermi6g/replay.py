"""Prioritized replay of fixed-length observation sequences.

Sampling is proportional to ``priority ** alpha`` through a sum tree;
importance weights ``(N * P(i)) ** -beta`` are normalized by their maximum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .domain import OBS_DIM

logger = logging.getLogger(__name__)

PRIORITY_EPS = 1e-3


class SumTree:
    """Binary tree over ``capacity`` leaves; each node holds the sum of its children."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"sum tree capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.tree = np.zeros(2 * capacity - 1)

    def update(self, point: int, weight: float):
        idx = point + self.capacity - 1
        change = weight - self.tree[idx]
        self.tree[idx] = weight
        while idx > 0:
            idx = (idx - 1) // 2
            self.tree[idx] += change

    def total(self) -> float:
        return float(self.tree[0])

    def leaf(self, point: int) -> float:
        return float(self.tree[point + self.capacity - 1])

    def find(self, v: float) -> int:
        """Leaf index whose cumulative range holds ``v``; zero-weight leaves are never returned."""
        idx = 0
        while idx < self.capacity - 1:
            left = 2 * idx + 1
            right = left + 1
            if v < self.tree[left] or self.tree[right] <= 0:
                idx = left
            else:
                v -= self.tree[left]
                idx = right
        return idx - (self.capacity - 1)


@dataclass
class SequenceTransition:
    """One stored stretch of an agent's episode, replayed from a zero hidden state."""
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    delays: np.ndarray
    interference: np.ndarray
    priority: float = 1.0

    def __post_init__(self):
        T = len(self.obs)
        if T == 0:
            raise ValueError("empty sequence")
        for name in ("actions", "rewards", "next_obs", "dones", "delays", "interference"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"sequence field {name} has length {len(getattr(self, name))}, expected {T}")
        if np.shape(self.obs)[-1] != OBS_DIM or np.shape(self.next_obs)[-1] != OBS_DIM:
            raise ValueError("sequence observations must have 8 features")
        if not self.priority > 0:
            raise ValueError(f"priority must be > 0, got {self.priority}")

    def __len__(self):
        return len(self.obs)


@dataclass
class SequenceBatch:
    """Padded batch of sequences; ``mask`` marks real steps."""
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    delays: np.ndarray
    interference: np.ndarray
    mask: np.ndarray
    weights: np.ndarray
    indices: np.ndarray

    @classmethod
    def stack(cls, items: Sequence[SequenceTransition], weights=None, indices=None) -> "SequenceBatch":
        B = len(items)
        T = max(len(s) for s in items)
        obs = np.zeros((B, T, OBS_DIM))
        next_obs = np.zeros((B, T, OBS_DIM))
        actions = np.zeros((B, T, 3), dtype=np.int64)
        rewards = np.zeros((B, T))
        dones = np.zeros((B, T))
        delays = np.zeros((B, T))
        interference = np.zeros((B, T))
        mask = np.zeros((B, T))
        for b, s in enumerate(items):
            n = len(s)
            obs[b, :n] = s.obs
            next_obs[b, :n] = s.next_obs
            actions[b, :n] = s.actions
            rewards[b, :n] = s.rewards
            dones[b, :n] = s.dones
            delays[b, :n] = s.delays
            interference[b, :n] = s.interference
            mask[b, :n] = 1.0
        return cls(obs=obs, actions=actions, rewards=rewards, next_obs=next_obs, dones=dones,
                   delays=delays, interference=interference, mask=mask,
                   weights=np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64),
                   indices=np.arange(B) if indices is None else np.asarray(indices))


class PrioritizedReplay:
    """Ring buffer of sequences with proportional prioritized sampling."""

    def __init__(self, capacity: int, alpha: float = 0.6, rng: np.random.Generator = None):
        self.capacity = capacity
        self.alpha = alpha
        self.rng = rng if rng is not None else np.random.default_rng()
        self.tree = SumTree(capacity)
        self.data: List[SequenceTransition] = [None] * capacity
        self.size = 0
        self.cursor = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.size

    def add(self, item: SequenceTransition, priority: float = None):
        """Store ``item``; without an explicit priority it gets the largest seen so far."""
        p = self.max_priority if priority is None else float(priority)
        if not p > 0:
            raise ValueError(f"priority must be > 0, got {p}")
        item.priority = p
        self.data[self.cursor] = item
        self.tree.update(self.cursor, p ** self.alpha)
        self.max_priority = max(self.max_priority, p)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def probability(self, index: int) -> float:
        return self.tree.leaf(index) / self.tree.total()

    def sample(self, batch_size: int, beta: float) -> SequenceBatch:
        """Draw ``batch_size`` sequences with replacement."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        total = self.tree.total()
        draws = self.rng.uniform(0.0, total, size=batch_size)
        indices = np.array([min(self.tree.find(v), self.size - 1) for v in draws])
        probs = np.array([self.probability(i) for i in indices])
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()
        return SequenceBatch.stack([self.data[i] for i in indices], weights=weights, indices=indices)

    def update_priorities(self, indices, priorities):
        for index, p in zip(indices, priorities):
            p = float(p)
            if not np.isfinite(p) or p <= 0:
                logger.debug("ignoring priority %r for slot %d", p, index)
                continue
            self.data[index].priority = p
            self.tree.update(int(index), p ** self.alpha)
            self.max_priority = max(self.max_priority, p)


def anneal_beta(beta_start: float, progress: float) -> float:
    """Linear schedule from ``beta_start`` to 1 as ``progress`` goes 0 -> 1."""
    progress = min(max(progress, 0.0), 1.0)
    return beta_start + (1.0 - beta_start) * progress
