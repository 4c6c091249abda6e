# domain.py
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Deque, Optional, Set

import numpy as np

MEGABYTE_BITS = 8_000_000
OBS_DIM = 8
CPU_MULTIPLIERS = (0.5, 1.0, 1.5)
APP_ACTIONS = 2
CPU_ACTIONS = len(CPU_MULTIPLIERS)


class TaskKind(IntEnum):
    """6G service class of a task; the value is its one-hot position."""
    URLLC = 0
    EMBB = 1
    MMTC = 2

    @property
    def size_mb(self) -> float:
        return TASK_TABLE[self][0]

    @property
    def deadline_s(self) -> float:
        return TASK_TABLE[self][1]


TASK_TABLE = {
    TaskKind.URLLC: (1.0, 2.0),
    TaskKind.EMBB: (3.0, 5.0),
    TaskKind.MMTC: (0.5, 10.0),
}


class AppDecision(IntEnum):
    LOCAL = 0
    OFFLOAD = 1


@dataclass
class Task:
    """A unit of work waiting in an agent's queue."""
    kind: TaskKind
    size_bits: int
    deadline_s: float
    created_step: int
    attempts: int = 0

    def __post_init__(self):
        if self.size_bits <= 0 or self.deadline_s <= 0 or self.attempts < 0:
            raise ValueError(f"invalid task {self!r}")

    @classmethod
    def of_kind(cls, kind: TaskKind, created_step: int) -> "Task":
        return cls(kind=kind, size_bits=int(kind.size_mb * MEGABYTE_BITS),
                   deadline_s=kind.deadline_s, created_step=created_step)

    @property
    def size_mb(self) -> float:
        return self.size_bits / MEGABYTE_BITS


@dataclass(frozen=True)
class ActionVector:
    """The cross-layer decision: offload or not, which channel, which CPU level."""
    app: int
    mac: int
    cpu_level: int

    def validate(self, num_channels: int) -> "ActionVector":
        if self.app not in (0, 1):
            raise ValueError(f"app decision must be 0 or 1, got {self.app}")
        if not 0 <= self.mac < num_channels:
            raise ValueError(f"channel {self.mac} out of range for {num_channels} channels")
        if not 0 <= self.cpu_level < CPU_ACTIONS:
            raise ValueError(f"cpu level {self.cpu_level} out of range")
        return self

    @property
    def offload(self) -> bool:
        return self.app == AppDecision.OFFLOAD

    @property
    def cpu_multiplier(self) -> float:
        return CPU_MULTIPLIERS[self.cpu_level]


@dataclass(frozen=True)
class Observation:
    """What one agent sees of the world: its own queue, battery, link and task."""
    queue_len_norm: float
    energy: float
    channel_gain: float
    task_kind: TaskKind
    cpu_usage: float
    mobility_speed_norm: float

    def to_array(self) -> np.ndarray:
        onehot = [0.0, 0.0, 0.0]
        onehot[int(self.task_kind)] = 1.0
        return np.array([self.queue_len_norm, self.energy, self.channel_gain, *onehot,
                         self.cpu_usage, self.mobility_speed_norm], dtype=np.float64)


@dataclass
class ChannelState:
    """One shared channel during one step."""
    bandwidth_hz: float
    capacity: int
    occupants: Set[int] = field(default_factory=set)


@dataclass
class AgentState:
    """Full private simulator state of one agent."""
    position: np.ndarray
    velocity: float
    heading: float
    task_kind: TaskKind
    energy: float = 1.0
    cpu_usage: float = 0.0
    queue: Deque[Task] = field(default_factory=deque)
    reliability_window: Deque[int] = field(default_factory=lambda: deque(maxlen=20))
    channel_history: Deque[int] = field(default_factory=lambda: deque(maxlen=20))
    mac_attempts: int = 0
    mac_successes: int = 0
    penalized: bool = False


@dataclass
class StepOutcome:
    """What happened to one agent during one step."""
    agent: int
    latency_s: float = 0.0
    energy_tx: float = 0.0
    energy_comp: float = 0.0
    task_kind: Optional[TaskKind] = None
    deadline_s: float = 0.0
    task_finished: bool = False
    task_succeeded: bool = False
    offloaded: bool = False
    mac_attempted: bool = False
    mac_succeeded: bool = False
    retrying: bool = False
    bits_delivered: int = 0
    task_bits: int = 0
    se_bps_hz: float = 0.0
    channel: int = 0
    dropped: int = 0

    @property
    def energy_spent(self) -> float:
        return self.energy_tx + self.energy_comp

    @property
    def completed_mb(self) -> float:
        """Size of the task this step completed, 0 unless it succeeded."""
        return self.task_bits / MEGABYTE_BITS if self.task_succeeded else 0.0

    @property
    def interference(self) -> bool:
        return self.mac_attempted and not self.mac_succeeded

    @property
    def normalized_delay(self) -> float:
        if self.deadline_s <= 0:
            return 0.0
        return min(self.latency_s / self.deadline_s, 1.0)
