"""Seedable simulator and training harness for federated multi-agent edge offloading."""

from .config import RewardWeights, TrainingConfig, parse_config, parse_config_text
from .env import EdgeEnvironment
from .orchestrator import Federation

__version__ = "0.1.0"
