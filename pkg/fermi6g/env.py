"""Discrete-time multi-agent edge environment.

Each step runs, in order: mobility, channel gains, MAC arbitration,
transmissions and local execution, then queue/energy/reliability
bookkeeping and one new task arrival per agent. One step is one second of
simulated time.
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .config import TrainingConfig
from .domain import (CPU_MULTIPLIERS, ActionVector, AgentState, ChannelState, Observation,
                     StepOutcome, Task, TaskKind)
from .errors import ConfigError, LookupFailure

logger = logging.getLogger(__name__)

DT = 1.0
MIN_VELOCITY = 0.1
MAX_VELOCITY = 1.0
HEADING_JITTER = math.pi / 4
PATH_LOSS_REF_M = 50.0
GAIN_FLOOR = 1e-3
BASE_RATE_MB_S = 1.0
COMP_ENERGY_PER_MB = 0.02
TX_ENERGY_PER_ATTEMPT = 0.01


def path_loss_gain(distance):
    return 1.0 / (1.0 + (distance / PATH_LOSS_REF_M) ** 2)


def local_execution(task: Task, cpu_level: int):
    """Latency and compute energy of running ``task`` on the device at ``cpu_level``."""
    mult = CPU_MULTIPLIERS[cpu_level]
    latency = task.size_mb / (BASE_RATE_MB_S * mult)
    energy = COMP_ENERGY_PER_MB * task.size_mb * mult ** 2
    return latency, energy


class EdgeEnvironment:
    """N mobile agents, one edge server, k shared channels.

    Every agent owns a private random stream derived from the reset seed and
    its id; MAC arbitration draws from one more stream. Nothing here is
    shared between two environment instances.
    """

    def __init__(self, config: TrainingConfig):
        if config.num_agents < 1:
            raise ConfigError("NUM_AGENTS must be >= 1", key="NUM_AGENTS")
        if config.num_channels < 1:
            raise ConfigError("NUM_CHANNELS must be >= 1", key="NUM_CHANNELS")
        self.config = config
        self.num_agents = config.num_agents
        self.num_channels = config.num_channels
        self.server = np.array(config.server_pos, dtype=np.float64)
        self.agents: List[AgentState] = []
        self.gains = np.zeros(self.num_agents)
        self.channels: List[ChannelState] = []
        self.loads = np.zeros(self.num_channels, dtype=np.int64)
        self.t = 0
        self.dropped_tasks = 0
        self.agent_rngs: List[np.random.Generator] = []
        self.mac_rng: Optional[np.random.Generator] = None

    def reset(self, seed: int) -> "EdgeEnvironment":
        cfg = self.config
        streams = np.random.SeedSequence(seed).spawn(self.num_agents + 1)
        self.agent_rngs = [np.random.default_rng(s) for s in streams[:-1]]
        self.mac_rng = np.random.default_rng(streams[-1])
        self.agents = []
        for rng in self.agent_rngs:
            kind = TaskKind(int(rng.integers(3)))
            agent = AgentState(
                position=rng.uniform(0.0, cfg.grid_size, size=2),
                velocity=float(rng.uniform(MIN_VELOCITY, MAX_VELOCITY)),
                heading=float(rng.uniform(0.0, 2 * math.pi)),
                task_kind=kind,
                reliability_window=deque(maxlen=cfg.steps),
                channel_history=deque(maxlen=cfg.steps),
            )
            agent.queue.append(Task.of_kind(kind, 0))
            self.agents.append(agent)
        self.t = 0
        self.dropped_tasks = 0
        self.loads = np.zeros(self.num_channels, dtype=np.int64)
        self.channels = self._fresh_channels()
        self.gains = np.array([self.channel_gain(i) for i in range(self.num_agents)])
        logger.debug("reset: %d agents, %d channels, seed %d", self.num_agents, self.num_channels, seed)
        return self

    def _fresh_channels(self):
        return [ChannelState(self.config.bandwidth_hz, self.config.channel_capacity)
                for _ in range(self.num_channels)]

    def _agent(self, agent: int) -> AgentState:
        if not isinstance(agent, (int, np.integer)) or not 0 <= agent < len(self.agents):
            raise LookupFailure(f"Unknown agent id {agent!r} (have {len(self.agents)} agents)")
        return self.agents[agent]

    def observe(self, agent: int) -> Observation:
        """The agent's local view; never reads another agent's state."""
        state = self._agent(agent)
        kind = state.queue[0].kind if state.queue else state.task_kind
        return Observation(
            queue_len_norm=len(state.queue) / self.config.queue_max,
            energy=state.energy,
            channel_gain=float(self.gains[agent]),
            task_kind=kind,
            cpu_usage=state.cpu_usage,
            mobility_speed_norm=state.velocity / MAX_VELOCITY,
        )

    def update_mobility(self):
        """Random walk: perturb each heading, move velocity * DT, clamp to the grid."""
        limit = self.config.grid_size
        for state, rng in zip(self.agents, self.agent_rngs):
            state.heading = float((state.heading + rng.normal(0.0, HEADING_JITTER)) % (2 * math.pi))
            step = state.velocity * DT * np.array([math.cos(state.heading), math.sin(state.heading)])
            state.position = np.clip(state.position + step, 0.0, limit)
        return [s.position.copy() for s in self.agents]

    def channel_gain(self, agent: int) -> float:
        state = self._agent(agent)
        distance = float(np.linalg.norm(state.position - self.server))
        gain = path_loss_gain(distance)
        if self.config.noise_std > 0:
            gain *= 1.0 + self.agent_rngs[agent].normal(0.0, self.config.noise_std)
        return max(gain, GAIN_FLOOR)

    def mac_arbitrate(self, requests: Mapping[int, Iterable[int]]) -> Dict[int, bool]:
        """Grant up to CHANNEL_CAPACITY requesters per channel, chosen uniformly."""
        capacity = self.config.channel_capacity
        decisions = {}
        for channel in sorted(requests):
            requesters = sorted(requests[channel])
            if len(requesters) <= capacity:
                granted = set(requesters)
            else:
                granted = set(int(a) for a in self.mac_rng.choice(requesters, size=capacity, replace=False))
            for agent in requesters:
                decisions[agent] = agent in granted
        return decisions

    def draw_task(self, agent: int) -> Task:
        kind = TaskKind(int(self.agent_rngs[agent].integers(3)))
        return Task.of_kind(kind, self.t)

    def spawn_task(self, agent: int) -> Optional[Task]:
        """Enqueue a new task; returns None when the queue is full and the task is dropped."""
        state = self._agent(agent)
        task = self.draw_task(agent)
        if len(state.queue) >= self.config.queue_max:
            self.dropped_tasks += 1
            state.reliability_window.append(0)
            return None
        state.queue.append(task)
        return task

    def step(self, joint_actions: Sequence[ActionVector]) -> List[StepOutcome]:
        if len(joint_actions) != self.num_agents:
            raise ValueError(f"expected {self.num_agents} actions, got {len(joint_actions)}")
        for action in joint_actions:
            action.validate(self.num_channels)

        self.update_mobility()
        self.gains = np.array([self.channel_gain(i) for i in range(self.num_agents)])

        requests: Dict[int, set] = {}
        for i, (state, action) in enumerate(zip(self.agents, joint_actions)):
            state.channel_history.append(action.mac)
            if action.offload and state.queue and state.energy > 0:
                requests.setdefault(action.mac, set()).add(i)
                self.loads[action.mac] += 1
        grants = self.mac_arbitrate(requests)
        self.channels = self._fresh_channels()
        for agent, granted in grants.items():
            if granted:
                self.channels[joint_actions[agent].mac].occupants.add(agent)

        outcomes = []
        for i, (state, action) in enumerate(zip(self.agents, joint_actions)):
            outcomes.append(self._serve(i, state, action, grants.get(i, False)))

        self.t += 1
        for i, outcome in enumerate(outcomes):
            if self.spawn_task(i) is None:
                outcome.dropped += 1
        return outcomes

    def _serve(self, i: int, state: AgentState, action: ActionVector, granted: bool) -> StepOutcome:
        cfg = self.config
        outcome = StepOutcome(agent=i, channel=action.mac)
        if not state.queue:
            return outcome
        task = state.queue[0]
        outcome.task_kind = task.kind
        outcome.task_bits = task.size_bits
        outcome.deadline_s = task.deadline_s
        wait = (self.t - task.created_step) * DT

        if state.energy <= 0:
            outcome.latency_s = wait
            self._finish(state, outcome, success=False)
            return outcome

        if not action.offload:
            latency, energy = local_execution(task, action.cpu_level)
            outcome.energy_comp = energy
            outcome.latency_s = wait + latency
            state.cpu_usage = action.cpu_multiplier / max(CPU_MULTIPLIERS)
            self._draw_energy(state, outcome)
            self._finish(state, outcome, success=outcome.latency_s <= task.deadline_s)
            return outcome

        state.cpu_usage = 0.0
        outcome.offloaded = True
        outcome.mac_attempted = True
        outcome.energy_tx = TX_ENERGY_PER_ATTEMPT
        task.attempts += 1
        state.mac_attempts += 1
        if granted:
            outcome.mac_succeeded = True
            state.mac_successes += 1
            sharing = max(len(self.channels[action.mac].occupants), 1)
            outcome.se_bps_hz = math.log2(1.0 + float(self.gains[i])) / sharing
            outcome.latency_s = wait + cfg.tx_delay_s
            outcome.bits_delivered = task.size_bits
            self._draw_energy(state, outcome)
            self._finish(state, outcome, success=outcome.latency_s <= task.deadline_s)
            return outcome

        outcome.latency_s = wait + cfg.tx_delay_s
        self._draw_energy(state, outcome)
        retry = self.agent_rngs[i].random() < cfg.retry_prob
        if retry and task.attempts < cfg.max_attempts:
            outcome.retrying = True
        else:
            self._finish(state, outcome, success=False)
        return outcome

    def _draw_energy(self, state: AgentState, outcome: StepOutcome):
        state.energy = max(0.0, state.energy - outcome.energy_spent)
        state.penalized = state.energy < self.config.energy_threshold

    def _finish(self, state: AgentState, outcome: StepOutcome, success: bool):
        state.queue.popleft()
        outcome.task_finished = True
        outcome.task_succeeded = success
        state.reliability_window.append(int(success))

    def channel_loads(self) -> np.ndarray:
        """Offload requests per channel so far this episode."""
        return self.loads.copy()

    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.agents])

    def penalized(self) -> List[bool]:
        return [s.penalized for s in self.agents]

    def drain(self, agent: int, level: float):
        """Force an agent's battery down to ``level`` (never up)."""
        state = self._agent(agent)
        state.energy = min(state.energy, float(level))
        state.penalized = state.energy < self.config.energy_threshold

    def snapshot(self) -> bytes:
        """Canonical byte dump of the full state, random streams included."""
        def task_row(t):
            return [int(t.kind), t.size_bits, t.deadline_s, t.created_step, t.attempts]

        doc = {
            "t": self.t,
            "dropped": self.dropped_tasks,
            "gains": [float(g) for g in self.gains],
            "loads": [int(v) for v in self.loads],
            "agents": [
                {
                    "position": [float(v) for v in s.position],
                    "velocity": s.velocity,
                    "heading": s.heading,
                    "task_kind": int(s.task_kind),
                    "energy": s.energy,
                    "cpu_usage": s.cpu_usage,
                    "queue": [task_row(t) for t in s.queue],
                    "reliability": list(s.reliability_window),
                    "channels": list(s.channel_history),
                    "mac": [s.mac_attempts, s.mac_successes],
                }
                for s in self.agents
            ],
            "rngs": [r.bit_generator.state for r in self.agent_rngs]
                    + [self.mac_rng.bit_generator.state if self.mac_rng else None],
        }
        return json.dumps(doc, sort_keys=True).encode("utf-8")


EnvState = EdgeEnvironment


def reset(config: TrainingConfig, seed: int) -> EdgeEnvironment:
    """Build and reset an environment in one call."""
    return EdgeEnvironment(config).reset(seed)
