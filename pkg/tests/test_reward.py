import itertools

import numpy as np
import pytest

from fermi6g.config import RewardWeights
from fermi6g.errors import ConsistencyError, DomainError
from fermi6g.reward import (MovingAverages, RewardInputs, adapt_weights, channel_entropy, energy_efficiency,
                            history_entropy, hybrid_fairness, jain_index, mac_success_rate, normalized_energy,
                            normalized_latency, normalized_se, penalties, reliability, total_reward)

UNIT = RewardWeights(w_L=1, w_E=1, w_F=1, w_SE=1, w_R=1, w_EE=1, w_MAC=1)
ZERO = RewardWeights(w_L=0, w_E=0, w_F=0, w_SE=0, w_R=0, w_EE=0, w_MAC=0)


def inputs(**changes) -> RewardInputs:
    base = dict(latency_s=1.0, deadline_s=1.0, energy_used=1.0, remaining_energy=1.0, fairness=1.0,
                reliability=1.0, spectral_efficiency=1.0, energy_efficiency=1.0, mac_success=1.0,
                energy_tx=0.4)
    base.update(changes)
    return RewardInputs(**base)


class TestNormalizations:
    def test_latency(self) -> None:
        assert normalized_latency(1.0, 2.0) == 0.5
        assert normalized_latency(2.0, 2.0) == 1.0
        assert normalized_latency(1.12, 2.0) == pytest.approx(0.56)

    def test_latency_domain(self) -> None:
        with pytest.raises(DomainError):
            normalized_latency(1.0, 0.0)

    def test_energy(self) -> None:
        assert normalized_energy(0.5, 1.0) == 0.5
        assert normalized_energy(1.0, 1.0) == 1.0
        assert normalized_energy(0.023, 1.0) == pytest.approx(0.023)
        with pytest.raises(DomainError):
            normalized_energy(0.5, 0.0)

    def test_spectral_efficiency_floor(self) -> None:
        assert normalized_se(0.005) == 0.01
        assert normalized_se(0.5) == 0.5
        assert normalized_se(0.0) == 0.01

    def test_energy_efficiency(self) -> None:
        assert energy_efficiency(100, 2) == 50
        assert energy_efficiency(0, 1) == 0
        with pytest.raises(DomainError):
            energy_efficiency(10, 0)


class TestFairness:
    def test_jain(self) -> None:
        assert jain_index([1, 1, 1, 1]) == 1.0
        assert jain_index([1, 0, 0, 0]) == 0.25
        assert jain_index([2, 1]) == pytest.approx(0.9)
        assert jain_index([0, 0, 0]) == 1.0

    def test_jain_bounds(self, rng) -> None:
        for n in range(1, 8):
            x = rng.uniform(0, 5, size=n)
            x[0] += 0.1
            assert 1 / n - 1e-12 <= jain_index(x) <= 1 + 1e-12

    def test_entropy(self) -> None:
        assert channel_entropy([1 / 3] * 3, 3) == pytest.approx(1.0)
        assert channel_entropy([1.0, 0.0, 0.0], 3) == 0.0
        assert channel_entropy([0.5, 0.5, 0.0], 3) == pytest.approx(0.6309, abs=1e-4)

    def test_entropy_domain(self) -> None:
        with pytest.raises(DomainError):
            channel_entropy([1.0], 1)
        with pytest.raises(DomainError):
            channel_entropy([0.5, 0.2], 2)

    def test_history_entropy(self) -> None:
        assert history_entropy([0, 1, 2], 3) == pytest.approx(1.0)
        assert history_entropy([], 3) == 0.0
        assert history_entropy([0, 0], 1) == 0.0

    def test_hybrid(self) -> None:
        w = RewardWeights()
        assert hybrid_fairness(1, 1, w) == 1.0
        assert hybrid_fairness(0, 0, w) == 0.0
        assert hybrid_fairness(0.8, 0.6, w) == pytest.approx(0.7)


class TestRates:
    def test_reliability(self) -> None:
        assert reliability([1, 1, 1, 1]).value == 1.0
        assert reliability([1, 1, 0, 1]).value == 0.75
        empty = reliability([])
        assert empty.value == 0.0 and not empty.has_data

    def test_mac_success(self) -> None:
        assert mac_success_rate(3, 4).value == 0.75
        assert mac_success_rate(4, 4).value == 1.0
        none = mac_success_rate(0, 0)
        assert float(none) == 0.0 and not none.has_data

    def test_mac_inconsistent(self) -> None:
        with pytest.raises(ConsistencyError):
            mac_success_rate(5, 4)


class TestPenalties:
    def test_cases(self) -> None:
        assert penalties(2.5, 0.5, 0.2) == (2, 1)
        assert penalties(1.0, 0.1, 0.2) == (1, 2)
        assert penalties(2.0, 0.2, 0.2) == (1, 1)


class TestTotalReward:
    def test_all_ones(self) -> None:
        assert total_reward(inputs(), UNIT).total == pytest.approx(7.0)

    def test_zero_weights(self) -> None:
        assert total_reward(inputs(), ZERO).total == 0.0

    def test_doubling_fairness_weight(self) -> None:
        base = total_reward(inputs(fairness=0.6), RewardWeights())
        doubled = total_reward(inputs(fairness=0.6), RewardWeights(w_F=0.3))
        assert doubled.fairness_term == pytest.approx(2 * base.fairness_term)
        assert doubled.total - base.total == pytest.approx(base.fairness_term)

    def test_inverse_floor(self) -> None:
        r = total_reward(inputs(latency_s=0.0, energy_used=0.0), UNIT)
        assert r.latency_norm == 0.01 and r.energy_norm == 0.01
        assert np.isfinite(r.total)

    def test_latency_penalty_doubles_term(self) -> None:
        w = RewardWeights()
        on_time = total_reward(inputs(latency_s=2.0, deadline_s=4.0), w)
        assert on_time.p_dyn == 1
        late = on_time.latency_term * 2
        # same normalized latency, penalty switched on by the absolute limit
        r = total_reward(inputs(latency_s=2.5, deadline_s=5.0), w)
        assert r.p_dyn == 2
        assert r.latency_term == pytest.approx(late)

    @pytest.mark.parametrize("tx", [0.0, 0.3, 1.0])
    def test_decomposition_identity(self, tx) -> None:
        rng = np.random.default_rng(5)
        for _ in range(50):
            w = RewardWeights(*rng.uniform(0, 1, size=7), lambda_extra=float(rng.uniform(0.1, 3)))
            m = inputs(latency_s=float(rng.uniform(0, 6)), deadline_s=float(rng.choice([2, 5, 10])),
                       energy_used=float(rng.uniform(0, 0.1)), remaining_energy=float(rng.uniform(0, 1)),
                       fairness=float(rng.uniform()), reliability=float(rng.uniform()),
                       spectral_efficiency=float(rng.uniform(0, 2)), energy_efficiency=float(rng.uniform(0, 100)),
                       mac_success=float(rng.uniform()))
            m = RewardInputs(**{**m.__dict__, "energy_tx": tx * m.energy_used})
            r = total_reward(m, w)
            assert abs(r.r_app + r.r_mac + r.lambda_extra * r.omega_extra - r.total) <= 1e-9

    def test_identity_over_ten_thousand_draws(self) -> None:
        rng = np.random.default_rng(17)
        for _ in range(10_000):
            w = RewardWeights(*rng.uniform(0, 1, size=7), lambda_extra=float(rng.uniform(0.1, 3)))
            used = float(rng.uniform(0, 0.2))
            m = RewardInputs(
                latency_s=float(rng.uniform(0, 12)), deadline_s=float(rng.choice([2, 5, 10])),
                energy_used=used, remaining_energy=float(rng.uniform(0, 1)), fairness=float(rng.uniform()),
                reliability=float(rng.uniform()), spectral_efficiency=float(rng.uniform(0, 2)),
                energy_efficiency=float(rng.uniform(0, 300)), mac_success=float(rng.uniform()),
                energy_tx=float(rng.uniform()) * used, completed=bool(rng.integers(2)))
            r = total_reward(m, w)
            assert abs(r.r_app + r.r_mac + r.lambda_extra * r.omega_extra - r.total) <= 1e-9

    def test_incomplete_step_has_no_inverse_terms(self) -> None:
        r = total_reward(inputs(latency_s=0.0, energy_used=0.0, completed=False), RewardWeights())
        assert r.latency_term == 0.0 and r.energy_term == 0.0
        assert r.total == pytest.approx(r.fairness_term + r.lambda_extra * r.omega_extra)
        assert r.r_app == 0.0

    def test_completed_task_beats_cheap_failure(self) -> None:
        w = RewardWeights()
        local = total_reward(inputs(latency_s=1.0, deadline_s=2.0, energy_used=0.02, energy_tx=0.0,
                                    energy_efficiency=1.0 / 0.02), w)
        denied = total_reward(inputs(latency_s=2.0, deadline_s=2.0, energy_used=0.01, energy_tx=0.01,
                                     energy_efficiency=0.0, completed=False), w)
        dead = total_reward(inputs(latency_s=0.0, deadline_s=2.0, energy_used=0.0, energy_tx=0.0,
                                   remaining_energy=0.0, energy_efficiency=0.0, completed=False), w)
        assert local.total > 10 * denied.total
        assert local.total > 10 * dead.total

    def test_pure(self) -> None:
        assert total_reward(inputs(), RewardWeights()) == total_reward(inputs(), RewardWeights())


class TestAdaptWeights:
    calm = MovingAverages(latency_s=1.0, energy=0.9, fairness=0.9)

    def test_disabled_is_identity(self) -> None:
        w = RewardWeights()
        assert adapt_weights(w, MovingAverages(5.0, 0.0, 0.0), enabled=False) is w

    def test_no_breach_only_renormalizes(self) -> None:
        w = RewardWeights(w_L=0.5, w_E=0.5, w_F=0.5, w_SE=0.5, w_R=0.5, w_EE=0.5, w_MAC=0.5)
        out = adapt_weights(w, self.calm, enabled=True)
        assert sum(out.objective_weights().values()) == pytest.approx(1.0)
        assert out.w_L == pytest.approx(1 / 7)

    def test_latency_breach_raises_ratio(self) -> None:
        w = RewardWeights()
        out = adapt_weights(w, MovingAverages(latency_s=3.0, energy=0.9, fairness=0.9), enabled=True)
        assert out.w_L / out.w_E > w.w_L / w.w_E
        assert sum(out.objective_weights().values()) == pytest.approx(1.0)

    def test_every_breach(self) -> None:
        w = RewardWeights()
        out = adapt_weights(w, MovingAverages(latency_s=3.0, energy=0.1, fairness=0.1), enabled=True)
        for name in ("w_L", "w_E", "w_F"):
            assert getattr(out, name) / out.w_R > getattr(w, name) / w.w_R
