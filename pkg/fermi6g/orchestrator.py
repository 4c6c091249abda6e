"""Episodic local training, periodic secure aggregation, and evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .agent import Learner
from .baselines import AppOnlyPolicy, RandomPolicy, RoundRobinPolicy
from .config import TrainingConfig
from .env import EdgeEnvironment
from .errors import SecAggError
from .metrics import METRIC_COLUMNS, EpisodeTally, MetricsRow, moving_average, summarize
from .network import CHECKPOINT_HEADER, QNetwork
from .reward import (MovingAverages, RewardInputs, adapt_weights, energy_efficiency, history_entropy,
                     hybrid_fairness, jain_index, mac_success_rate, reliability, total_reward)
from .secagg import KeyPair, eligibility_filter, keygen, secure_round

logger = logging.getLogger(__name__)


def episode_seed(seed: int, episode: int, stream: int = 0) -> int:
    """Environment seed of one episode, derived from the run seed."""
    return int(np.random.SeedSequence([seed, episode, stream]).generate_state(1)[0])


@dataclass
class RoundRecord:
    round_number: int
    episode: int
    participants: List[int]
    bytes_on_wire: int = 0
    aborted: bool = False
    skipped: bool = False
    reason: str = ""


@dataclass
class EpisodeResult:
    row: MetricsRow
    tally: EpisodeTally
    rewards: np.ndarray
    faults: int = 0


@dataclass
class EvaluationSummary:
    """Greedy rollout statistics: ``metrics`` maps each column to (mean, std)."""
    metrics: Dict[str, tuple]
    class_reliability: Dict[str, float]
    rows: List[MetricsRow] = field(default_factory=list)


class Federation:
    """N agents, their environment, and the shared global model."""

    def __init__(self, config: TrainingConfig,
                 env_factory: Callable[[TrainingConfig], EdgeEnvironment] = None):
        self.config = config
        self.network = QNetwork(config.hidden_size, config.num_channels)
        model_ss, agent_ss = np.random.SeedSequence(config.seed).spawn(2)
        self.global_params = self.network.init_params(np.random.default_rng(model_ss))
        self.agent_rngs = [np.random.default_rng(s) for s in agent_ss.spawn(config.num_agents)]
        self.env = env_factory(config) if env_factory else EdgeEnvironment(config)
        made = [self._make_policy(i, rng) for i, rng in enumerate(self.agent_rngs)]
        self.policies = [policy for policy, _ in made]
        self.learner_of: Dict[int, Learner] = {i: learner for i, (_, learner) in enumerate(made)
                                              if learner is not None}
        self.learners: List[Learner] = list(self.learner_of.values())
        self.keys: Dict[int, KeyPair] = {i: keygen() for i in range(config.num_agents)}
        self.weights = config.weights
        self.log: List[MetricsRow] = []
        self.rounds: List[RoundRecord] = []
        self.checkpoints: List[tuple] = []
        self.final_energies: List[float] = []
        self.round_number = 0

    def _make_policy(self, agent_id: int, rng: np.random.Generator) -> Tuple[object, Optional[Learner]]:
        """The acting policy of one agent and the learner it trains, if any."""
        cfg = self.config
        if cfg.policy == "fermi6g":
            learner = Learner(agent_id, cfg, self.network, self.global_params, rng)
            return learner, learner
        if cfg.policy == "fedmarl_baseline":
            learner = Learner(agent_id, cfg, self.network, self.global_params, rng, heads=("app",))
            return AppOnlyPolicy(learner), learner
        if cfg.policy == "round_robin":
            return RoundRobinPolicy(agent_id, cfg.num_channels), None
        return RandomPolicy(agent_id, cfg.num_channels, rng), None

    @property
    def learning(self) -> bool:
        return bool(self.learners)

    def _actions(self, observations, step: int, explore: bool):
        loads = self.env.channel_loads()
        actions = []
        for policy, obs in zip(self.policies, observations):
            action = policy.act(obs, step, loads.copy(), explore)
            if action.offload:
                loads[action.mac] += 1
            actions.append(action)
        return actions

    def _rewards(self, outcomes):
        env = self.env
        successes = [a.mac_successes for a in env.agents]
        f_jain = jain_index(successes)
        h_avg = float(np.mean([history_entropy(a.channel_history, env.num_channels) for a in env.agents]))
        fairness = hybrid_fairness(f_jain, h_avg, self.weights)
        rewards = []
        for o, state in zip(outcomes, env.agents):
            spent = o.energy_spent
            deadline = o.deadline_s if o.deadline_s > 0 else state.task_kind.deadline_s
            inputs = RewardInputs(
                latency_s=o.latency_s,
                deadline_s=deadline,
                energy_used=spent,
                remaining_energy=state.energy,
                fairness=fairness,
                reliability=reliability(state.reliability_window).value,
                spectral_efficiency=o.se_bps_hz,
                energy_efficiency=energy_efficiency(o.completed_mb, spent) if spent > 0 else 0.0,
                mac_success=mac_success_rate(state.mac_successes, state.mac_attempts).value,
                energy_tx=o.energy_tx,
                energy_threshold=self.config.energy_threshold,
                completed=o.task_succeeded,
            )
            rewards.append(total_reward(inputs, self.weights).total)
        return np.array(rewards), fairness

    def run_episode(self, episode: int, explore: bool = True, learn: bool = True,
                    seed: Optional[int] = None) -> EpisodeResult:
        """observe -> recurrent update -> act -> step -> reward -> store -> learn, for STEPS steps."""
        cfg = self.config
        env = self.env
        env.reset(episode_seed(cfg.seed, episode) if seed is None else seed)
        for policy in self.policies:
            policy.begin_episode()
        tally = EpisodeTally(cfg.num_agents, cfg.bandwidth_hz)
        faults_before = sum(l.faults for l in self.learners)
        totals = np.zeros(cfg.num_agents)
        observations = [env.observe(i) for i in range(cfg.num_agents)]
        for step in range(cfg.steps):
            actions = self._actions(observations, step, explore)
            outcomes = env.step(actions)
            next_obs = [env.observe(i) for i in range(cfg.num_agents)]
            rewards, fairness = self._rewards(outcomes)
            totals += rewards
            done = step == cfg.steps - 1
            if learn:
                for i, learner in self.learner_of.items():
                    o = outcomes[i]
                    learner.record(observations[i], actions[i], rewards[i], next_obs[i], done,
                                   o.normalized_delay, float(o.interference))
                    learner.learn()
            tally.add_step(outcomes, rewards, fairness)
            observations = next_obs
        faults = sum(l.faults for l in self.learners) - faults_before
        if faults:
            logger.warning("episode %d: %d learner update(s) discarded", episode, faults)
        return EpisodeResult(row=tally.row(episode, faults=faults), tally=tally, rewards=totals, faults=faults)

    def divergence(self) -> float:
        """Mean L2 distance of the agents' parameters from the last global model."""
        if not self.learners:
            return 0.0
        return float(np.mean([np.linalg.norm(l.params - self.global_params) for l in self.learners]))

    def federated_round(self, episode: int, drop: Sequence[int] = ()) -> RoundRecord:
        """Eligibility filter, quantize, mask, aggregate, broadcast to every agent."""
        self.round_number += 1
        r = self.round_number
        energies = self.env.energies()
        by_id = {l.agent_id: l for l in self.learners}
        participants = eligibility_filter(sorted(by_id), energies, self.config.energy_threshold)
        record = RoundRecord(round_number=r, episode=episode, participants=participants)
        if not participants:
            record.skipped = True
            record.reason = "no agent above the energy threshold"
            logger.warning("round %d skipped: %s", r, record.reason)
            self.rounds.append(record)
            return record
        snapshot = {i: by_id[i].params.copy() for i in participants}
        try:
            average, uplink = secure_round(snapshot, self.keys, r, drop=drop)
        except SecAggError as e:
            record.aborted = True
            record.reason = getattr(e, "reason", str(e))
            logger.warning("%s; agents keep their local models", e)
            self.rounds.append(record)
            return record
        self.global_params = average
        for learner in self.learners:
            learner.load_global(average)
        downlink = len(self.learners) * (CHECKPOINT_HEADER.size + 8 * self.network.size)
        record.bytes_on_wire = uplink + downlink
        self.checkpoints.append((r, average.copy()))
        self.rounds.append(record)
        logger.info("round %d: %d/%d participants, %d bytes", r, len(participants),
                    self.config.num_agents, record.bytes_on_wire)
        return record

    def _adapt(self):
        cfg = self.config
        window = cfg.smoothing_window
        averages = MovingAverages(
            latency_s=float(moving_average([row.latency for row in self.log], window)[-1]),
            energy=float(moving_average(self.final_energies, window)[-1]),
            fairness=float(moving_average([row.fairness for row in self.log], window)[-1]),
        )
        new = adapt_weights(self.weights, averages, True, cfg.energy_threshold)
        if new != self.weights:
            logger.debug("reward weights adapted to %s", new.objective_weights())
        self.weights = new

    def train(self, episodes: Optional[int] = None) -> List[MetricsRow]:
        cfg = self.config
        episodes = cfg.episodes if episodes is None else episodes
        every = max(1, episodes // 10)
        logger.info("training %s: %d agents, %d channels, %d episodes", cfg.policy,
                    cfg.num_agents, cfg.num_channels, episodes)
        for n in range(1, episodes + 1):
            result = self.run_episode(n)
            for learner in self.learners:
                learner.end_episode(n / episodes)
            self.final_energies.append(float(np.mean(self.env.energies())))
            row = result.row
            row.divergence = self.divergence()
            if self.learning and n % cfg.agg_interval == 0:
                row.comm_bytes = self.federated_round(n).bytes_on_wire
            self.log.append(row)
            if cfg.reward_adaptation:
                self._adapt()
            logger.debug("episode %d: %s", n, row)
            if n % every == 0:
                logger.info("episode %d/%d: reward %.3f reliability %.3f", n, episodes, row.reward, row.reliability)
        return self.log

    def load_params(self, params: np.ndarray):
        """Install a global model in every learner."""
        self.global_params = np.array(params, dtype=np.float64, copy=True)
        for learner in self.learners:
            learner.load_global(self.global_params)

    def evaluate(self, episodes: int, seed: int) -> EvaluationSummary:
        """Greedy rollouts without learning or aggregation."""
        for i, policy in enumerate(self.policies):
            if isinstance(policy, RandomPolicy):
                policy.rng = np.random.default_rng(np.random.SeedSequence([seed, i, 1]))
        rows = []
        per_class = {}
        for e in range(1, episodes + 1):
            result = self.run_episode(e, explore=False, learn=False, seed=episode_seed(seed, e, stream=1))
            rows.append(result.row)
            for kind, (ok, n) in result.tally.per_class.items():
                acc = per_class.setdefault(kind.name, [0, 0])
                acc[0] += ok
                acc[1] += n
        return EvaluationSummary(
            metrics=summarize(rows, METRIC_COLUMNS),
            class_reliability={k: (ok / n if n else 0.0) for k, (ok, n) in per_class.items()},
            rows=rows,
        )


def train(config: TrainingConfig) -> List[MetricsRow]:
    return Federation(config).train()
