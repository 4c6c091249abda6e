"""Per-agent recurrent Q-learner.

One ``Learner`` owns an online and a target parameter vector, a prioritized
sequence replay, an exploration rate and the recurrent state carried
through the current episode.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import TrainingConfig
from .domain import ActionVector, Observation
from .errors import TrainingFault
from .network import HEADS, QNetwork
from .replay import PRIORITY_EPS, PrioritizedReplay, SequenceBatch, SequenceTransition, anneal_beta

logger = logging.getLogger(__name__)


def select_action(q_triple, epsilon: float, rng: np.random.Generator) -> ActionVector:
    """Per head: uniform with probability epsilon, else argmax (ties go to the lowest index)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    picks = []
    for q in q_triple:
        q = np.asarray(q).reshape(-1)
        if epsilon > 0 and rng.random() < epsilon:
            picks.append(int(rng.integers(q.size)))
        else:
            picks.append(int(np.argmax(q)))
    return ActionVector(*picks)


def decay_epsilon(eps: float, eps_end: float = 0.05, decay: float = 0.995) -> float:
    return max(eps_end, eps * decay)


def sync_target(params: np.ndarray, target: np.ndarray = None) -> np.ndarray:
    """Hard copy of the online parameters."""
    return np.array(params, dtype=np.float64, copy=True)


@dataclass
class TDResult:
    loss: float
    grad: np.ndarray
    td: np.ndarray
    priorities: np.ndarray


def td_loss_and_grad(network: QNetwork, params, target_params, batch: SequenceBatch,
                     gamma: float, heads: Sequence[str] = HEADS, eta: float = 0.5) -> TDResult:
    """Importance-weighted squared TD error summed over heads and steps, and its gradient.

    Targets come from the target network run over ``obs[0], next_obs[0..T-1]``
    so each bootstrap value sees the same history as the online estimate.
    """
    q_app, q_mac, q_cpu, _, cache = network.forward(params, batch.obs, cache=True)
    seq = np.concatenate([batch.obs[:, :1], batch.next_obs], axis=1)
    t_app, t_mac, t_cpu, _ = network.forward(target_params, seq)
    online = {"app": q_app, "mac": q_mac, "cpu": q_cpu}
    boot = {"app": t_app[:, 1:], "mac": t_mac[:, 1:], "cpu": t_cpu[:, 1:]}

    B, T = batch.rewards.shape
    bi, ti = np.meshgrid(np.arange(B), np.arange(T), indexing="ij")
    w = batch.weights[:, None] * batch.mask
    loss = 0.0
    dq = {}
    td_abs = np.zeros((B, T))
    for h, name in enumerate(HEADS):
        dq[name] = np.zeros_like(online[name])
        if name not in heads:
            continue
        a = batch.actions[:, :, h]
        q_taken = online[name][bi, ti, a]
        y = batch.rewards + gamma * (1.0 - batch.dones) * boot[name].max(axis=-1)
        td = (q_taken - y) * batch.mask
        loss += float(np.sum(w * td ** 2))
        dq[name][bi, ti, a] = 2.0 * w * td
        td_abs += np.abs(td)
    td_abs /= max(len(heads), 1)

    steps = np.maximum(batch.mask.sum(axis=1), 1.0)
    mean_td = td_abs.sum(axis=1) / steps
    side = ((batch.delays + batch.interference) * batch.mask).sum(axis=1) / steps
    priorities = mean_td + eta * side + PRIORITY_EPS

    grad = network.backward(params, cache, dq["app"], dq["mac"], dq["cpu"])
    return TDResult(loss=loss, grad=grad, td=td_abs, priorities=priorities)


def clip_by_global_norm(grad: np.ndarray, clip_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > clip_norm > 0:
        return grad * (clip_norm / norm)
    return grad


def td_update(network: QNetwork, params, target_params, batch: SequenceBatch, gamma: float,
              lr: float, clip_norm: float, heads: Sequence[str] = HEADS,
              eta: float = 0.5) -> Tuple[np.ndarray, np.ndarray, float]:
    """One clipped gradient step; returns ``(new_params, priorities, loss)``.

    Raises ``TrainingFault`` (leaving ``params`` untouched) when the loss or
    gradient is not finite.
    """
    result = td_loss_and_grad(network, params, target_params, batch, gamma, heads, eta)
    if not np.isfinite(result.loss) or not np.all(np.isfinite(result.grad)):
        raise TrainingFault(f"non-finite TD loss {result.loss!r}; batch discarded")
    step = clip_by_global_norm(result.grad, clip_norm)
    return np.asarray(params) - lr * step, result.priorities, result.loss


class Learner:
    """Online/target weights, replay and exploration state of one agent."""

    def __init__(self, agent_id: int, config: TrainingConfig, network: QNetwork,
                 params: np.ndarray, rng: np.random.Generator, heads: Sequence[str] = HEADS):
        self.agent_id = agent_id
        self.config = config
        self.network = network
        self.params = np.array(params, dtype=np.float64, copy=True)
        self.target = sync_target(self.params)
        self.rng = rng
        self.heads = tuple(heads)
        self.epsilon = config.eps_start
        self.replay = PrioritizedReplay(max(config.buffer // config.sequence_length, 1),
                                        alpha=config.per_alpha, rng=rng)
        self.beta = config.per_beta_start
        self.updates = 0
        self.faults = 0
        self.last_loss: Optional[float] = None
        self.hidden = network.zero_state(1)
        self._pending: List[tuple] = []

    def begin_episode(self):
        self.hidden = self.network.zero_state(1)
        self._pending = []

    def q_values(self, obs: Observation):
        """Feed one observation through the recurrent cell and return the three Q rows."""
        q_app, q_mac, q_cpu, self.hidden = self.network.forward(
            self.params, obs.to_array()[None, None, :], self.hidden)
        return q_app[0, 0], q_mac[0, 0], q_cpu[0, 0]

    def act(self, obs: Observation, step: int = 0, loads=None, explore: bool = True) -> ActionVector:
        return select_action(self.q_values(obs), self.epsilon if explore else 0.0, self.rng)

    def record(self, obs: Observation, action: ActionVector, reward: float, next_obs: Observation,
               done: bool, delay: float = 0.0, interference: float = 0.0):
        self._pending.append((obs.to_array(), (action.app, action.mac, action.cpu_level), reward,
                              next_obs.to_array(), float(done), delay, interference))
        if done or len(self._pending) >= self.config.sequence_length:
            self.commit()

    def commit(self):
        """Move the pending steps into replay as one sequence."""
        if not self._pending:
            return
        cols = list(zip(*self._pending))
        self.replay.add(SequenceTransition(
            obs=np.array(cols[0]), actions=np.array(cols[1], dtype=np.int64),
            rewards=np.array(cols[2], dtype=np.float64), next_obs=np.array(cols[3]),
            dones=np.array(cols[4]), delays=np.array(cols[5], dtype=np.float64),
            interference=np.array(cols[6], dtype=np.float64)))
        self._pending = []

    def learn(self) -> Optional[float]:
        """One replay update; returns the loss, or None when nothing was learned."""
        if len(self.replay) == 0:
            return None
        cfg = self.config
        batch = self.replay.sample(cfg.batch, self.beta)
        try:
            self.params, priorities, loss = td_update(
                self.network, self.params, self.target, batch, cfg.gamma, cfg.lr,
                cfg.clip_norm, self.heads, cfg.priority_eta)
        except TrainingFault as e:
            self.faults += 1
            logger.warning("agent %d: %s", self.agent_id, e)
            return None
        self.replay.update_priorities(batch.indices, priorities)
        self.updates += 1
        if self.updates % cfg.sync_freq == 0:
            self.target = sync_target(self.params)
        self.last_loss = loss
        return loss

    def end_episode(self, progress: float):
        self.commit()
        self.epsilon = decay_epsilon(self.epsilon, self.config.eps_end, self.config.eps_decay)
        self.beta = anneal_beta(self.config.per_beta_start, progress)

    def load_global(self, params: np.ndarray):
        """Adopt broadcast weights as both online and target parameters."""
        self.params = np.array(params, dtype=np.float64, copy=True)
        self.target = sync_target(self.params)
