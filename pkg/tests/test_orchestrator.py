import numpy as np
import pytest

from fermi6g.app import scaled_channels
from fermi6g.config import TrainingConfig
from fermi6g.domain import ActionVector
from fermi6g.env import EdgeEnvironment
from fermi6g.metrics import METRIC_COLUMNS, moving_average, render_csv
from fermi6g.orchestrator import Federation, episode_seed
from fermi6g.secagg import fedavg, keygen


def perturbed(config, seed=0) -> Federation:
    """A federation whose learners hold different parameter vectors."""
    fed = Federation(config)
    fed.env.reset(3)
    rng = np.random.default_rng(seed)
    for learner in fed.learners:
        learner.params = learner.params + rng.normal(scale=0.1, size=learner.params.size)
    return fed


class DrainedAgentEnvironment(EdgeEnvironment):
    """Agent 0 starts every episode below the eligibility threshold."""

    def reset(self, seed):
        super().reset(seed)
        self.drain(0, 0.1)
        return self


def last_fifty_reward(rows) -> float:
    return float(np.mean([row.reward for row in rows[-50:]]))


class TestStepRewards:
    def test_dead_battery_earns_less_than_completed_tasks(self, small_config) -> None:
        fed = Federation(small_config)
        fed.env.reset(3)
        fed.env.drain(0, 0.0)
        outcomes = fed.env.step([ActionVector(0, 0, 1)] * 3)
        rewards, _ = fed._rewards(outcomes)
        assert not outcomes[0].task_succeeded
        assert all(o.task_succeeded for o in outcomes[1:])
        assert rewards[0] < 1.0 < min(rewards[1:])

    def test_denied_offload_earns_less_than_granted(self, small_config) -> None:
        fed = Federation(small_config.replace(num_channels=1, channel_capacity=1, retry_prob=0.0))
        fed.env.reset(3)
        outcomes = fed.env.step([ActionVector(1, 0, 1)] * 3)
        rewards, _ = fed._rewards(outcomes)
        granted = [r for r, o in zip(rewards, outcomes) if o.mac_succeeded]
        denied = [r for r, o in zip(rewards, outcomes) if not o.mac_succeeded]
        assert len(granted) == 1 and len(denied) == 2
        assert max(denied) < 1.0 < min(granted)


class TestEpisodes:
    def test_zero_episodes(self, small_config) -> None:
        fed = Federation(small_config.replace(episodes=0))
        assert fed.train() == []
        assert fed.rounds == []

    def test_single_step_episode(self, small_config) -> None:
        fed = Federation(small_config.replace(steps=1))
        result = fed.run_episode(1)
        assert result.rewards.shape == (3,)
        assert np.all(np.isfinite(result.rewards))
        assert result.row.episode == 1

    def test_episode_seed(self) -> None:
        assert episode_seed(1, 2) == episode_seed(1, 2)
        assert episode_seed(1, 2) != episode_seed(1, 3)
        assert episode_seed(1, 2, stream=1) != episode_seed(1, 2)

    def test_learners_fill_replay(self, small_config) -> None:
        fed = Federation(small_config)
        fed.run_episode(1)
        assert all(len(l.replay) == 1 for l in fed.learners)
        assert all(l.updates == 1 for l in fed.learners)

    def test_training_is_deterministic(self, small_config) -> None:
        a = Federation(small_config).train()
        b = Federation(small_config).train()
        assert render_csv(a) == render_csv(b)
        assert len(a) == small_config.episodes

    def test_rounds_on_interval(self, small_config) -> None:
        fed = Federation(small_config)
        rows = fed.train()
        assert [r.episode for r in fed.rounds] == [2, 4]
        for row in rows:
            if row.episode % 2:
                assert row.comm_bytes == 0
            elif not fed.rounds[row.episode // 2 - 1].skipped:
                assert row.comm_bytes > 0

    @pytest.mark.parametrize("policy", ["random", "round_robin"])
    def test_fixed_policies_never_aggregate(self, small_config, policy) -> None:
        fed = Federation(small_config.replace(policy=policy))
        rows = fed.train()
        assert not fed.learning
        assert fed.rounds == []
        assert all(r.comm_bytes == 0 and r.divergence == 0.0 for r in rows)

    def test_app_only_baseline_trains(self, small_config) -> None:
        fed = Federation(small_config.replace(policy="fedmarl_baseline"))
        rows = fed.train()
        assert len(rows) == small_config.episodes
        assert all(l.heads == ("app",) for l in fed.learners)


class TestFederatedRound:
    def test_identical_params_have_no_divergence(self, small_config) -> None:
        assert Federation(small_config).divergence() == 0.0

    def test_consensus_after_broadcast(self, small_config) -> None:
        fed = perturbed(small_config)
        assert fed.divergence() > 0
        record = fed.federated_round(1)
        assert not record.aborted and not record.skipped
        assert fed.divergence() == 0.0
        for learner in fed.learners:
            np.testing.assert_array_equal(learner.target, fed.global_params)

    def test_drained_agent_excluded_but_updated(self, small_config) -> None:
        fed = perturbed(small_config)
        fed.env.drain(0, 0.1)
        snapshot = [l.params.copy() for l in fed.learners]
        record = fed.federated_round(1)
        assert record.participants == [1, 2]
        assert np.max(np.abs(fed.global_params - fedavg(snapshot[1:]))) <= 3 * 2.0 ** -16
        np.testing.assert_array_equal(fed.learners[0].params, fed.global_params)

    def test_masked_matches_plain_average(self, small_config) -> None:
        fed = perturbed(small_config, seed=4)
        expected = fedavg([l.params for l in fed.learners])
        fed.federated_round(1)
        assert np.max(np.abs(fed.global_params - expected)) <= 3 * 2.0 ** -16

    def test_dropout_aborts_and_keeps_local_models(self, small_config) -> None:
        fed = perturbed(small_config)
        before = [l.params.copy() for l in fed.learners]
        global_before = fed.global_params.copy()
        record = fed.federated_round(1, drop=[1])
        assert record.aborted and record.bytes_on_wire == 0
        np.testing.assert_array_equal(fed.global_params, global_before)
        for learner, params in zip(fed.learners, before):
            np.testing.assert_array_equal(learner.params, params)
        assert fed.checkpoints == []

    def test_everyone_drained_skips(self, small_config) -> None:
        fed = perturbed(small_config)
        for i in range(3):
            fed.env.drain(i, 0.05)
        record = fed.federated_round(1)
        assert record.skipped and record.participants == []
        assert fed.rounds[-1] is record

    def test_unquantizable_update_aborts_round(self, small_config) -> None:
        fed = perturbed(small_config)
        fed.learners[0].params[0] = 1e6
        global_before = fed.global_params.copy()
        record = fed.federated_round(1)
        assert record.aborted and record.reason
        np.testing.assert_array_equal(fed.global_params, global_before)
        assert fed.rounds[-1] is record and fed.checkpoints == []

    def test_drained_agent_never_participates(self, small_config) -> None:
        fed = Federation(small_config.replace(episodes=6), env_factory=DrainedAgentEnvironment)
        fed.train()
        assert [r.episode for r in fed.rounds] == [2, 4, 6]
        for record in fed.rounds:
            assert not record.aborted and not record.skipped
            assert 0 not in record.participants
        for learner in fed.learners:
            np.testing.assert_array_equal(learner.params, fed.global_params)
            np.testing.assert_array_equal(learner.target, fed.global_params)

    def test_keys_do_not_come_from_the_run_seed(self, small_config) -> None:
        a, b = Federation(small_config), Federation(small_config)
        assert a.keys[0].public != b.keys[0].public
        seeded = keygen(np.random.default_rng(np.random.SeedSequence(small_config.seed).spawn(3)[2]))
        assert all(k.public != seeded.public for k in a.keys.values())

    def test_bytes_and_checkpoint(self, small_config) -> None:
        fed = perturbed(small_config)
        record = fed.federated_round(1)
        assert record.bytes_on_wire > 3 * 4 * fed.network.size
        assert fed.checkpoints[-1][0] == record.round_number == 1


class TestEvaluate:
    def test_columns(self, small_config) -> None:
        summary = Federation(small_config).evaluate(2, seed=5)
        assert set(summary.metrics) == set(METRIC_COLUMNS)
        assert len(summary.rows) == 2
        assert set(summary.class_reliability) <= {"URLLC", "EMBB", "MMTC"}

    @pytest.mark.parametrize("policy", ["fermi6g", "random"])
    def test_deterministic(self, small_config, policy) -> None:
        config = small_config.replace(policy=policy)
        a = Federation(config).evaluate(2, seed=5)
        b = Federation(config).evaluate(2, seed=5)
        assert render_csv(a.rows) == render_csv(b.rows)

    def test_no_learning_during_evaluation(self, small_config) -> None:
        fed = Federation(small_config)
        before = [l.params.copy() for l in fed.learners]
        fed.evaluate(1, seed=2)
        assert all(len(l.replay) == 0 for l in fed.learners)
        for learner, params in zip(fed.learners, before):
            np.testing.assert_array_equal(learner.params, params)


@pytest.mark.slow
class TestLongerRuns:
    def test_reward_adaptation_keeps_weights_normalized(self, small_config) -> None:
        fed = Federation(small_config.replace(episodes=40, reward_adaptation=True))
        rows = fed.train()
        assert sum(fed.weights.objective_weights().values()) == pytest.approx(1.0)
        assert all(np.isfinite(getattr(r, c)) for r in rows for c in METRIC_COLUMNS)

    def test_exploration_decays(self, small_config) -> None:
        fed = Federation(small_config.replace(episodes=100))
        fed.train()
        assert all(l.epsilon == pytest.approx(0.995 ** 100) for l in fed.learners)
        assert all(l.beta == 1.0 for l in fed.learners)

    def test_fifty_agents_with_scaled_channels(self) -> None:
        config = TrainingConfig(num_agents=50, num_channels=scaled_channels(50), episodes=20, seed=9)
        fed = Federation(config)
        rows = fed.train()
        assert len(rows) == 20
        assert [r.episode for r in fed.rounds] == [10, 20]
        assert not any(r.aborted for r in fed.rounds)
        capacity = config.buffer // config.sequence_length
        assert all(len(l.replay) <= capacity for l in fed.learners)

        rng = np.random.default_rng(0)
        for learner in fed.learners:
            learner.params = learner.params + rng.normal(scale=0.1, size=learner.params.size)
        energies = fed.env.energies()
        eligible = [l.params for l in fed.learners if energies[l.agent_id] > config.energy_threshold]
        assert eligible
        expected = fedavg(eligible)
        record = fed.federated_round(21)
        assert not record.aborted
        assert np.max(np.abs(fed.global_params - expected)) <= 3 * 2.0 ** -16


@pytest.mark.slow
class TestLearningProgress:
    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    def test_beats_random_and_becomes_reliable(self, seed) -> None:
        config = TrainingConfig(episodes=300, seed=seed)
        learned = Federation(config).train()
        control = Federation(config.replace(policy="random")).train()
        assert last_fifty_reward(learned) >= 1.25 * last_fifty_reward(control)
        smoothed = moving_average([row.reliability for row in learned], config.smoothing_window)
        assert max(smoothed) >= 0.80

    def test_cross_layer_matches_app_only_under_contention(self) -> None:
        wins = 0
        for seed in range(1, 6):
            config = TrainingConfig(num_agents=8, num_channels=2, episodes=300, seed=seed)
            cross_layer = last_fifty_reward(Federation(config).train())
            app_only = last_fifty_reward(Federation(config.replace(policy="fedmarl_baseline")).train())
            wins += cross_layer >= app_only
        assert wins >= 4
