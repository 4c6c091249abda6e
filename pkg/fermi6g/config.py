"""Experiment configuration: defaults, validation and the text format.

A config file is a list of ``KEY = value`` lines, optionally grouped under
``[env]``, ``[train]`` and ``[reward]`` headers. Lines before any header may
set environment or training keys. ``parse_config`` is the only entry point
the CLI uses; ``TrainingConfig.to_text`` prints a file that parses back to an
equal config.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple

from .errors import ConfigError
from .lexer import tokenize
from .nodes import *
from .parser import Parser

POLICIES = ("fermi6g", "fedmarl_baseline", "random", "round_robin")


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the multi-objective reward.

    ``alpha``, ``beta`` and ``gamma_fair`` are not free parameters: they are
    the coefficients under which the application/MAC decomposition sums back
    to the total reward, so they are read off ``w_L``, ``w_E`` and ``w_F``.
    """

    w_L: float = 0.25
    w_E: float = 0.2
    w_F: float = 0.15
    w_SE: float = 0.1
    w_R: float = 0.15
    w_EE: float = 0.1
    w_MAC: float = 0.05
    beta_jain: float = 0.5
    beta_entropy: float = 0.5
    lambda_extra: float = 1.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{f.name} must be a finite number >= 0, got {value}", key=f.name)
        if abs(self.beta_jain + self.beta_entropy - 1.0) > 1e-9:
            raise ConfigError(
                f"beta_jain + beta_entropy must equal 1, got {self.beta_jain + self.beta_entropy}",
                key="beta_entropy")
        if self.lambda_extra <= 0:
            raise ConfigError("lambda_extra must be > 0", key="lambda_extra")

    @property
    def alpha(self):
        return self.w_L

    @property
    def beta(self):
        return self.w_E

    @property
    def gamma_fair(self):
        return self.w_F

    def objective_weights(self) -> Dict[str, float]:
        """The seven objective weights, keyed by name, in declaration order."""
        return {name: getattr(self, name) for name in OBJECTIVE_WEIGHTS}

    def replace(self, **changes) -> "RewardWeights":
        return dataclasses.replace(self, **changes)


OBJECTIVE_WEIGHTS = ("w_L", "w_E", "w_F", "w_SE", "w_R", "w_EE", "w_MAC")


@dataclass(frozen=True)
class TrainingConfig:
    """Every knob of a run. Defaults are the reference simulation parameters."""

    # environment
    num_agents: int = 5
    num_channels: int = 3
    steps: int = 20
    grid_size: float = 100.0
    server_pos: Tuple[float, float] = (50.0, 50.0)
    retry_prob: float = 0.3
    noise_std: float = 0.05
    tx_delay_s: float = 2.0
    energy_threshold: float = 0.2
    queue_max: int = 10
    channel_capacity: int = 2
    max_attempts: int = 3
    bandwidth_hz: float = 150e9
    # training
    episodes: int = 800
    buffer: int = 10000
    batch: int = 16
    gamma: float = 0.99
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.995
    sync_freq: int = 10
    sequence_length: int = 20
    clip_norm: float = 1.0
    smoothing_window: int = 10
    agg_interval: int = 10
    hidden_size: int = 32
    reward_adaptation: bool = False
    policy: str = "fermi6g"
    seed: int = 0
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    priority_eta: float = 0.5
    weights: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        object.__setattr__(self, "server_pos", tuple(float(v) for v in self.server_pos))
        self.validate()

    def validate(self):
        def require(condition, key, message):
            if not condition:
                raise ConfigError(f"{key_for_field(key)} {message}", key=key_for_field(key))

        require(self.num_agents >= 1, "num_agents", "must be >= 1")
        require(self.num_agents <= 0xFFFF, "num_agents", "must fit a 16-bit participant id")
        require(self.num_channels >= 1, "num_channels", "must be >= 1")
        require(self.steps >= 1, "steps", "must be >= 1")
        require(self.grid_size > 0, "grid_size", "must be > 0")
        require(len(self.server_pos) == 2, "server_pos", "must be an (x, y) pair")
        require(all(0 <= v <= self.grid_size for v in self.server_pos), "server_pos", "must lie on the grid")
        require(0 <= self.retry_prob <= 1, "retry_prob", "must be in [0, 1]")
        require(self.noise_std >= 0, "noise_std", "must be >= 0")
        require(self.tx_delay_s >= 0, "tx_delay_s", "must be >= 0")
        require(0 <= self.energy_threshold <= 1, "energy_threshold", "must be in [0, 1]")
        require(self.queue_max >= 1, "queue_max", "must be >= 1")
        require(self.channel_capacity >= 1, "channel_capacity", "must be >= 1")
        require(self.max_attempts >= 1, "max_attempts", "must be >= 1")
        require(self.bandwidth_hz > 0, "bandwidth_hz", "must be > 0")
        require(self.episodes >= 0, "episodes", "must be >= 0")
        require(self.buffer >= 1, "buffer", "must be >= 1")
        require(self.batch >= 1, "batch", "must be >= 1")
        require(0 <= self.gamma < 1, "gamma", "must be in [0, 1)")
        require(self.lr >= 0, "lr", "must be >= 0")
        require(0 <= self.eps_end <= self.eps_start <= 1, "eps_end", "must satisfy 0 <= EPS_END <= EPS_START <= 1")
        require(0 < self.eps_decay <= 1, "eps_decay", "must be in (0, 1]")
        require(self.sync_freq >= 1, "sync_freq", "must be >= 1")
        require(1 <= self.sequence_length <= self.buffer, "sequence_length", "must be in [1, BUFFER]")
        require(self.clip_norm > 0, "clip_norm", "must be > 0")
        require(self.smoothing_window >= 1, "smoothing_window", "must be >= 1")
        require(self.agg_interval >= 1, "agg_interval", "must be >= 1")
        require(self.hidden_size >= 1, "hidden_size", "must be >= 1")
        require(self.policy in POLICIES, "policy", f"must be one of {', '.join(POLICIES)}")
        require(0 <= self.seed < 2 ** 64, "seed", "must be an unsigned 64-bit integer")
        require(self.per_alpha >= 0, "per_alpha", "must be >= 0")
        require(0 <= self.per_beta_start <= 1, "per_beta_start", "must be in [0, 1]")
        require(self.priority_eta >= 0, "priority_eta", "must be >= 0")

    def replace(self, **changes) -> "TrainingConfig":
        """A validated copy with some fields changed."""
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = ["# FERMI-6G experiment configuration", "[env]"]
        lines += [f"{key} = {_format_value(getattr(self, name))}" for key, name in ENV_KEYS.items()]
        lines += ["", "[train]"]
        lines += [f"{key} = {_format_value(getattr(self, name))}" for key, name in TRAIN_KEYS.items()]
        lines += ["", "[reward]"]
        lines += [f"{key} = {_format_value(getattr(self.weights, key))}" for key in REWARD_KEYS]
        return "\n".join(lines) + "\n"

    def to_mapping(self) -> Dict[str, Any]:
        """Flat key -> value view used for manifests."""
        out = {key: getattr(self, name) for key, name in {**ENV_KEYS, **TRAIN_KEYS}.items()}
        out.update({f"reward.{key}": getattr(self.weights, key) for key in REWARD_KEYS})
        return out


ENV_KEYS = {
    "NUM_AGENTS": "num_agents",
    "NUM_CHANNELS": "num_channels",
    "STEPS": "steps",
    "GRID_SIZE": "grid_size",
    "SERVER_POS": "server_pos",
    "RETRY_PROB": "retry_prob",
    "NOISE_STD": "noise_std",
    "TX_DELAY_S": "tx_delay_s",
    "ENERGY_THRESHOLD": "energy_threshold",
    "QUEUE_MAX": "queue_max",
    "CHANNEL_CAPACITY": "channel_capacity",
    "MAX_ATTEMPTS": "max_attempts",
    "BANDWIDTH_HZ": "bandwidth_hz",
}

TRAIN_KEYS = {
    "EPISODES": "episodes",
    "BUFFER": "buffer",
    "BATCH": "batch",
    "GAMMA": "gamma",
    "LR": "lr",
    "EPS_START": "eps_start",
    "EPS_END": "eps_end",
    "EPS_DECAY": "eps_decay",
    "SYNC_FREQ": "sync_freq",
    "SEQUENCE_LENGTH": "sequence_length",
    "CLIP_NORM": "clip_norm",
    "SMOOTHING_WINDOW": "smoothing_window",
    "AGG_INTERVAL": "agg_interval",
    "HIDDEN_SIZE": "hidden_size",
    "REWARD_ADAPTATION": "reward_adaptation",
    "POLICY": "policy",
    "SEED": "seed",
    "PER_ALPHA": "per_alpha",
    "PER_BETA_START": "per_beta_start",
    "PRIORITY_ETA": "priority_eta",
}

REWARD_KEYS = tuple(f.name for f in dataclasses.fields(RewardWeights))

SECTIONS = {
    None: {**ENV_KEYS, **TRAIN_KEYS},
    "env": ENV_KEYS,
    "train": TRAIN_KEYS,
    "reward": {key: key for key in REWARD_KEYS},
}

_FIELD_TO_KEY = {name: key for key, name in {**ENV_KEYS, **TRAIN_KEYS}.items()}


def key_for_field(name):
    return _FIELD_TO_KEY.get(name, name)


def _field_types():
    hints = {}
    for f in dataclasses.fields(TrainingConfig):
        hints[f.name] = f.type
    for f in dataclasses.fields(RewardWeights):
        hints[f.name] = f.type
    return hints


FIELD_TYPES = _field_types()

_BARE_WORD = re.compile(r'^[a-zA-Z_][\w\-]*$')


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return "(" + ", ".join(_format_value(v) for v in value) + ")"
    if isinstance(value, str):
        if _BARE_WORD.match(value) and value not in ("true", "false"):
            return value
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return str(value)


class ConfigBuilder:
    """Walks the parsed config and collects validated field values."""

    def __init__(self):
        self.section = None
        self.fields = {}
        self.reward_fields = {}
        self.lines = {}

    def visit(self, node):
        method_name = f'visit_{type(node).__name__}'
        visitor = getattr(self, method_name, self.no_visit_method)
        return visitor(node)

    def no_visit_method(self, node):
        raise ConfigError(f"No visit_{type(node).__name__} method defined")

    def visit_Section(self, node):
        if node.name not in SECTIONS:
            raise ConfigError(f"Unknown section [{node.name}]", line=node.token[2])
        self.section = node.name

    def visit_Assign(self, node):
        table = SECTIONS[self.section]
        key = node.key if self.section == "reward" else node.key.upper()
        if key not in table:
            where = f"section [{self.section}]" if self.section else "the top level"
            raise ConfigError(f"Unknown key {node.key} in {where}", key=node.key, line=node.line)
        name = table[key]
        if key in self.lines:
            raise ConfigError(f"{key} is set twice (first on line {self.lines[key]})", key=key, line=node.line)
        self.lines[key] = node.line
        value = self.coerce(name, key, node.expr, node.line)
        if self.section == "reward":
            self.reward_fields[name] = value
        else:
            self.fields[name] = value

    def visit_Number(self, node):
        return node.value

    def visit_StringLiteral(self, node):
        return node.value

    def visit_BooleanLiteral(self, node):
        return node.value

    def visit_TupleLiteral(self, node):
        return tuple(self.visit(elem) for elem in node.elements)

    def coerce(self, name, key, expr, line):
        expected = FIELD_TYPES[name]
        value = self.visit(expr)
        if expected == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {value!r}", key=key, line=line)
            return value
        if expected == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number, got {value!r}", key=key, line=line)
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(f"{key} must be finite", key=key, line=line)
            return value
        if expected == "bool":
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be true or false, got {value!r}", key=key, line=line)
            return value
        if expected == "str":
            if not isinstance(value, str):
                raise ConfigError(f"{key} must be a name, got {value!r}", key=key, line=line)
            return value
        if not isinstance(value, tuple) or len(value) != 2 or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key} must be an (x, y) pair, got {value!r}", key=key, line=line)
        return value

    def build(self) -> TrainingConfig:
        try:
            weights = RewardWeights(**self.reward_fields)
            return TrainingConfig(weights=weights, **self.fields)
        except ConfigError as e:
            line = self.lines.get(e.key)
            if line is None:
                raise
            raise ConfigError(e.detail, key=e.key, line=line) from None


def parse_config_text(text: str) -> TrainingConfig:
    statements = Parser(tokenize(text), text).parse()
    builder = ConfigBuilder()
    for stmt in statements:
        builder.visit(stmt)
    return builder.build()


def parse_config(path) -> TrainingConfig:
    """Read a config file; missing keys take their defaults, unknown keys are rejected."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"File not found at '{path}'") from None
    except OSError as e:
        raise ConfigError(f"Cannot read '{path}': {e}") from None
    return parse_config_text(text)
