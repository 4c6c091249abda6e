"""Scoring formulas of the multi-objective reward.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .config import OBJECTIVE_WEIGHTS, RewardWeights
from .errors import ConsistencyError, DomainError

INVERSE_FLOOR = 0.01
SE_FLOOR = 0.01
LATENCY_LIMIT_S = 2.0
FAIRNESS_FLOOR = 0.5
NUDGE = 1.10
IDENTITY_TOLERANCE = 1e-9


class Estimate(NamedTuple):
    """A rate that may have been computed from no samples at all."""
    value: float
    has_data: bool

    def __float__(self):
        return float(self.value)


def normalized_latency(latency_s, deadline_s):
    if deadline_s <= 0:
        raise DomainError(f"deadline must be > 0, got {deadline_s}")
    if latency_s < 0:
        raise DomainError(f"latency must be >= 0, got {latency_s}")
    return latency_s / deadline_s


def normalized_energy(energy, e_max):
    if e_max <= 0:
        raise DomainError(f"E_max must be > 0, got {e_max}")
    return energy / e_max


def jain_index(x: Sequence[float]) -> float:
    """(sum x)^2 / (N * sum x^2); an all-zero allocation counts as perfectly fair."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DomainError("jain index of an empty allocation")
    if np.any(x < 0):
        raise DomainError("jain index needs nonnegative inputs")
    denom = x.size * float(np.sum(x * x))
    if denom == 0:
        return 1.0
    return float(np.sum(x)) ** 2 / denom


def channel_entropy(p: Sequence[float], num_channels: int) -> float:
    """Shannon entropy of a channel-access distribution, normalized by log2(M)."""
    if num_channels < 2:
        raise DomainError(f"channel entropy needs at least 2 channels, got {num_channels}")
    p = np.asarray(p, dtype=np.float64)
    if abs(float(p.sum()) - 1.0) > 1e-9 or np.any(p < 0):
        raise DomainError(f"not a probability distribution: {p.tolist()}")
    nz = p[p > 0]
    h = -float(np.sum(nz * np.log2(nz))) / math.log2(num_channels)
    return min(max(h, 0.0), 1.0)


def history_entropy(choices: Sequence[int], num_channels: int) -> float:
    """Normalized entropy of an agent's recent channel picks (0 with no history or one channel)."""
    if num_channels < 2 or len(choices) == 0:
        return 0.0
    counts = np.bincount(np.asarray(choices, dtype=np.int64), minlength=num_channels)
    return channel_entropy(counts / counts.sum(), num_channels)


def hybrid_fairness(f_jain, h_avg, weights: RewardWeights):
    return weights.beta_jain * f_jain + weights.beta_entropy * h_avg


def reliability(window: Sequence[int]) -> Estimate:
    if len(window) == 0:
        return Estimate(0.0, False)
    return Estimate(float(np.mean(window)), True)


def normalized_se(se):
    if not math.isfinite(se):
        raise DomainError(f"spectral efficiency must be finite, got {se}")
    return max(se, SE_FLOOR)


def energy_efficiency(throughput, energy_total):
    if energy_total <= 0:
        raise DomainError(f"energy must be > 0 for an efficiency, got {energy_total}")
    return throughput / energy_total


def mac_success_rate(successes: int, total: int) -> Estimate:
    if total < 0 or successes < 0:
        raise ConsistencyError(f"negative MAC counters ({successes}/{total})")
    if successes > total:
        raise ConsistencyError(f"{successes} MAC successes out of {total} attempts")
    if total == 0:
        return Estimate(0.0, False)
    return Estimate(successes / total, True)


def penalties(latency_s, energy, threshold):
    """(P_dyn, P_energy): each doubles when its limit is strictly exceeded."""
    p_dyn = 2 if latency_s > LATENCY_LIMIT_S else 1
    p_energy = 2 if energy < threshold else 1
    return p_dyn, p_energy


@dataclass(frozen=True)
class RewardInputs:
    """Raw per-step metrics of one agent."""
    latency_s: float
    deadline_s: float
    energy_used: float
    remaining_energy: float
    fairness: float
    reliability: float
    spectral_efficiency: float
    energy_efficiency: float
    mac_success: float
    energy_tx: float = 0.0
    e_max: float = 1.0
    energy_threshold: float = 0.2
    completed: bool = True


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    r_app: float
    r_mac: float
    omega_extra: float
    lambda_extra: float
    p_dyn: int
    p_energy: int
    latency_term: float
    energy_term: float
    fairness_term: float
    latency_norm: float
    energy_norm: float
    fairness: float
    reliability: float
    spectral_efficiency: float
    energy_efficiency: float
    mac_success: float


def total_reward(m: RewardInputs, weights: RewardWeights) -> RewardBreakdown:
    """Weighted sum of inverse latency, inverse energy, fairness, reliability,
    spectral efficiency, energy efficiency and MAC success.

    The same value is also split into an application part (latency plus the
    compute share of the energy term), a MAC part (transmit share of the
    energy term plus fairness) and lambda * omega for the remaining terms.

    A step whose task did not complete has unbounded latency, so it earns
    neither inverse term; only fairness and the extras remain.
    """
    l_norm = max(normalized_latency(m.latency_s, m.deadline_s), INVERSE_FLOOR)
    e_norm = max(normalized_energy(m.energy_used, m.e_max), INVERSE_FLOOR)
    se = normalized_se(m.spectral_efficiency)
    p_dyn, p_energy = penalties(m.latency_s, m.remaining_energy, m.energy_threshold)

    credit = 1.0 if m.completed else 0.0
    latency_term = credit * weights.w_L / l_norm * p_dyn
    energy_term = credit * weights.w_E / e_norm * p_energy
    fairness_term = weights.w_F * m.fairness
    extras = (weights.w_R * m.reliability + weights.w_SE * se
              + weights.w_EE * m.energy_efficiency + weights.w_MAC * m.mac_success)
    total = latency_term + energy_term + fairness_term + extras

    tx_share = m.energy_tx / m.energy_used if m.energy_used > 0 else 0.0
    tx_share = min(max(tx_share, 0.0), 1.0)
    r_app = credit * weights.alpha / l_norm * p_dyn + (1.0 - tx_share) * energy_term
    r_mac = tx_share * energy_term + weights.gamma_fair * m.fairness
    omega = extras / weights.lambda_extra

    recomposed = r_app + r_mac + weights.lambda_extra * omega
    if abs(recomposed - total) > IDENTITY_TOLERANCE * max(1.0, abs(total)):
        raise ConsistencyError(f"reward decomposition {recomposed} != total {total}")

    return RewardBreakdown(
        total=total, r_app=r_app, r_mac=r_mac, omega_extra=omega,
        lambda_extra=weights.lambda_extra, p_dyn=p_dyn, p_energy=p_energy,
        latency_term=latency_term, energy_term=energy_term, fairness_term=fairness_term,
        latency_norm=l_norm, energy_norm=e_norm, fairness=m.fairness,
        reliability=m.reliability, spectral_efficiency=se,
        energy_efficiency=m.energy_efficiency, mac_success=m.mac_success,
    )


@dataclass(frozen=True)
class MovingAverages:
    """Smoothed episode metrics that drive weight adaptation."""
    latency_s: float
    energy: float
    fairness: float


def adapt_weights(weights: RewardWeights, averages: MovingAverages, enabled: bool,
                  energy_threshold: float = 0.2) -> RewardWeights:
    """Nudge w_L, w_E, w_F up by 10% on a breach, then rescale the seven weights to sum 1."""
    if not enabled:
        return weights
    values = weights.objective_weights()
    if averages.latency_s > LATENCY_LIMIT_S:
        values["w_L"] *= NUDGE
    if averages.energy < energy_threshold:
        values["w_E"] *= NUDGE
    if averages.fairness < FAIRNESS_FLOOR:
        values["w_F"] *= NUDGE
    total = sum(values.values())
    if total <= 0:
        return weights
    return weights.replace(**{name: values[name] / total for name in OBJECTIVE_WEIGHTS})
