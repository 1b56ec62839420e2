import math

import numpy as np
import pytest

import imarl.training
from imarl import (AgentRollout, ContractError, EpsilonSchedule, NumericError,
                   RunConfig, Trajectory, TransferIncompatibilityError,
                   a2c_gradients, a2c_losses, collect_episode,
                   discounted_returns, epsilon_at, init_params, load_scenario,
                   select_action, sgd_update, train_run)
from imarl.network import ACTOR_HEAD, CRITIC_HEAD

from conftest import lines_descriptor

# 99th percentile of the chi-squared distribution with 5 degrees of freedom.
CHI2_CRIT_DF5_ALPHA_01 = 15.08627246938899


def toy_config(descriptor_kwargs=None, **overrides):
    scenario = load_scenario(lines_descriptor(**(descriptor_kwargs or {})))
    defaults = dict(scenario=scenario, resolution=19, episodes=2, seeds=1,
                    hidden_dims=(8,))
    defaults.update(overrides)
    return RunConfig(**defaults)


class TestEpsilonSchedule:
    def test_initial_value_at_zero(self):
        s = EpsilonSchedule()
        assert epsilon_at(0, s) == 1.0

    def test_floor_at_and_beyond_decay_steps(self):
        s = EpsilonSchedule()
        assert epsilon_at(s.decay_steps, s) == s.epsilon_min
        assert epsilon_at(10 * s.decay_steps, s) == s.epsilon_min

    def test_linear_midpoint(self):
        s = EpsilonSchedule(epsilon_initial=1.0, epsilon_min=1e-4,
                            decay_steps=30_000)
        assert epsilon_at(15_000, s) == 0.5

    def test_non_increasing_everywhere(self):
        s = EpsilonSchedule(decay_steps=500)
        values = [epsilon_at(t, s) for t in range(2 * s.decay_steps + 1)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert min(values) == s.epsilon_min

    def test_negative_step_rejected(self):
        with pytest.raises(ContractError):
            epsilon_at(-1, EpsilonSchedule())

    def test_invalid_schedule_rejected(self):
        with pytest.raises(ContractError):
            EpsilonSchedule(epsilon_initial=0.5, epsilon_min=0.6)
        with pytest.raises(ContractError):
            EpsilonSchedule(epsilon_min=0.0)


class TestSelectAction:
    def test_greedy_at_zero_epsilon(self):
        rng = np.random.default_rng(0)
        probs = np.array([0.5, 0.2, 0.1, 0.1, 0.05, 0.05])
        assert all(select_action(probs, 0.0, rng) == 0 for _ in range(100))

    def test_greedy_tie_takes_lowest_index(self):
        rng = np.random.default_rng(1)
        probs = np.array([0.0, 0.5, 0.5, 0.0, 0.0, 0.0])
        assert select_action(probs, 0.0, rng) == 1

    def test_one_hot_distribution_is_fixed(self):
        rng = np.random.default_rng(2)
        probs = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        for epsilon in (0.0, 0.3, 1.0):
            assert all(select_action(probs, epsilon, rng) == 2
                       for _ in range(50))

    def test_uniform_frequencies_at_full_epsilon(self):
        rng = np.random.default_rng(3)
        probs = np.full(6, 1.0 / 6.0)
        counts = np.zeros(6)
        draws = 60_000
        for _ in range(draws):
            counts[select_action(probs, 1.0, rng)] += 1
        assert np.abs(counts / draws - 1.0 / 6.0).max() <= 0.01

    def test_chi_squared_goodness_of_fit(self):
        rng = np.random.default_rng(4)
        probs = np.array([0.35, 0.25, 0.15, 0.12, 0.08, 0.05])
        counts = np.zeros(6)
        draws = 60_000
        for _ in range(draws):
            counts[select_action(probs, 1.0, rng)] += 1
        expected = probs * draws
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 <= CHI2_CRIT_DF5_ALPHA_01

    def test_degenerate_probs_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(NumericError):
            select_action(np.array([np.nan, 0.5, 0.5, 0, 0, 0]), 0.5, rng)
        with pytest.raises(NumericError):
            select_action(np.array([-0.1, 0.6, 0.5, 0, 0, 0]), 0.5, rng)
        with pytest.raises(NumericError):
            select_action(np.array([0.2, 0.2, 0.2, 0, 0, 0]), 0.5, rng)

    def test_bad_epsilon_rejected(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ContractError):
            select_action(np.full(6, 1 / 6), 1.5, rng)


class TestDiscountedReturns:
    def test_closed_form_example(self):
        assert discounted_returns([0.0, 0.0, 1.0]).tolist() == \
            pytest.approx([0.81, 0.9, 1.0], abs=1e-15)

    def test_single_step(self):
        assert discounted_returns([3.5]).tolist() == [3.5]

    def test_all_zeros(self):
        assert not discounted_returns(np.zeros(10)).any()

    def test_matches_double_sum_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 51))
            rewards = rng.uniform(-2, 2, size=n)
            got = discounted_returns(rewards, 0.9)
            for t in range(n):
                expected = sum(0.9 ** (k - t) * rewards[k] for k in range(t, n))
                assert got[t] == pytest.approx(expected, abs=1e-12)


def make_trajectory(states, actions, step_rewards, step_indices=None):
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    if step_indices is None:
        step_indices = np.arange(actions.size)
    agent = AgentRollout(
        unit_id=0,
        states=states,
        actions=actions,
        step_indices=np.asarray(step_indices, dtype=np.int64),
        behavior_probs=np.full((actions.size, 6), 1.0 / 6.0),
        values=np.full(actions.size, np.nan),
    )
    return Trajectory(agents=[agent],
                      step_rewards=np.asarray(step_rewards, dtype=np.float64),
                      episode_reward=float(np.sum(step_rewards)),
                      win=False)


def scalar_forward(params, x):
    """Straight-line per-element recomputation of the network forward pass."""
    a = list(x)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = [sum(a[k] * w[k, j] for k in range(len(a))) + b[j]
             for j in range(w.shape[1])]
        a = [(v if v > 0 else math.exp(v) - 1) for v in z] if i < last else z
    if params.head == ACTOR_HEAD:
        m = max(a)
        e = [math.exp(v - m) for v in a]
        s = sum(e)
        return [v / s for v in e]
    return a[0]


class TestA2CLosses:
    def _nets(self, d=3, seed=0):
        rng = np.random.default_rng(seed)
        actor = init_params((d, 4, 6), ACTOR_HEAD, rng)
        critic = init_params((d, 4, 1), CRITIC_HEAD, rng)
        return actor, critic

    def test_zero_advantage_zeroes_both_losses(self):
        actor, critic = self._nets()
        traj = make_trajectory(np.zeros((2, 3)), [0, 1], [0.0, 0.0])
        # Zero networks on zero input: V = 0 = G everywhere.
        for w in critic.weights + critic.biases:
            w[:] = 0.0
        actor_loss, critic_loss = a2c_losses(traj, actor, critic)
        assert actor_loss == 0.0
        assert critic_loss == 0.0

    def test_single_step_unit_advantage(self):
        actor, critic = self._nets()
        for w in actor.weights + actor.biases:
            w[:] = 0.0  # uniform policy: pi(a) = 1/6
        for w in critic.weights + critic.biases:
            w[:] = 0.0  # V = 0
        traj = make_trajectory(np.zeros((1, 3)), [4], [1.0])  # G = 1, A = 1
        actor_loss, critic_loss = a2c_losses(traj, actor, critic)
        assert actor_loss == pytest.approx(-math.log(1.0 / 6.0), abs=1e-12)
        assert actor_loss == pytest.approx(1.791759469228055, abs=1e-9)
        assert critic_loss == pytest.approx(1.0, abs=1e-12)

    def test_two_step_toy_matches_straight_line_recomputation(self):
        actor, critic = self._nets(seed=11)
        states = np.array([[0.2, -0.4, 0.6], [-0.1, 0.3, 0.5]])
        traj = make_trajectory(states, [1, 4], [0.5, 1.0])
        got_actor, got_critic = a2c_losses(traj, actor, critic, discount=0.9)

        g1 = 1.0
        g0 = 0.5 + 0.9 * g1
        terms_actor = []
        terms_critic = []
        for x, action, g in ((states[0], 1, g0), (states[1], 4, g1)):
            p = scalar_forward(actor, x)[action]
            v = scalar_forward(critic, x)
            advantage = g - v
            terms_actor.append(-math.log(max(p, 1e-12)) * advantage)
            terms_critic.append((g - v) ** 2)
        assert got_actor == pytest.approx(sum(terms_actor) / 2, abs=1e-9)
        assert got_critic == pytest.approx(sum(terms_critic) / 2, abs=1e-9)

    def test_one_update_reduces_critic_loss_on_frozen_batch(self):
        actor, critic = self._nets(seed=12)
        rng = np.random.default_rng(13)
        traj = make_trajectory(rng.standard_normal((6, 3)),
                               rng.integers(0, 6, size=6),
                               rng.uniform(0, 2, size=6))
        _, loss_before = a2c_losses(traj, actor, critic)
        _, _, _, critic_grads, _ = a2c_gradients(traj, actor, critic)
        critic2 = sgd_update(critic, critic_grads, 1e-4)
        _, loss_after = a2c_losses(traj, actor, critic2)
        assert loss_after < loss_before

    def test_empty_trajectory_rejected(self):
        actor, critic = self._nets()
        traj = Trajectory(agents=[], step_rewards=np.zeros(0),
                          episode_reward=0.0, win=False)
        with pytest.raises(ContractError):
            a2c_losses(traj, actor, critic)


class TestRunConfig:
    def test_discount_bounds(self):
        with pytest.raises(ContractError):
            toy_config(discount=1.0)
        with pytest.raises(ContractError):
            toy_config(discount=0.0)

    def test_schema_reflects_resolution(self):
        cfg = toy_config()
        assert cfg.encoding_schema.resolution == 19
        assert cfg.encoding_schema.state_length == 4829


class TestTrainRun:
    def test_single_episode_series_length(self):
        result = train_run(toy_config(episodes=1), rng_seed=0)
        assert result.rewards.shape == (1,)
        assert result.wins.shape == (1,)
        assert result.epsilons[0] == 1.0

    def test_deterministic_given_seed(self):
        cfg = toy_config(episodes=3)
        a = train_run(cfg, rng_seed=9)
        b = train_run(cfg, rng_seed=9)
        assert np.array_equal(a.rewards, b.rewards)
        assert np.array_equal(a.epsilons, b.epsilons)
        for wa, wb in zip(a.checkpoint.actor.weights, b.checkpoint.actor.weights):
            assert np.array_equal(wa, wb)

    def test_different_seeds_diverge(self):
        cfg = toy_config(episodes=3)
        a = train_run(cfg, rng_seed=1)
        b = train_run(cfg, rng_seed=2)
        assert not np.array_equal(a.rewards, b.rewards)

    def test_rewards_stay_in_range(self):
        result = train_run(toy_config(episodes=4), rng_seed=3)
        assert (result.rewards >= 0.0).all()
        assert (result.rewards <= 20.0).all()

    def test_checkpoint_carries_provenance(self):
        result = train_run(toy_config(episodes=2), rng_seed=5)
        assert len(result.checkpoint.provenance) == 1
        entry = result.checkpoint.provenance[0]
        assert entry.scenario == "lines"
        assert entry.episodes == 2
        assert entry.rng_seed == 5

    def test_transfer_across_team_sizes(self):
        # The core transferability contract: a policy trained with 3 agents
        # drives an 8-agent scenario without any dimension error.
        small = toy_config(descriptor_kwargs=dict(n_allies=3, n_enemies=3),
                           episodes=1)
        seed_ckpt = train_run(small, rng_seed=0).checkpoint
        big = toy_config(descriptor_kwargs=dict(n_allies=8, n_enemies=8),
                         episodes=1)
        result = train_run(big, initial_checkpoint=seed_ckpt, rng_seed=1)
        assert result.rewards.shape == (1,)
        assert len(result.checkpoint.provenance) == 2

    def test_schema_mismatch_rejected(self):
        seed_ckpt = train_run(toy_config(episodes=1), rng_seed=0).checkpoint
        target = toy_config(episodes=1, resolution=37)
        with pytest.raises(TransferIncompatibilityError):
            train_run(target, initial_checkpoint=seed_ckpt, rng_seed=1)

    def test_all_agents_share_one_network(self, monkeypatch):
        seen_actor_ids = set()
        original = imarl.training.forward_cached

        def recording(params, x):
            if params.head == ACTOR_HEAD:
                seen_actor_ids.add(id(params))
            return original(params, x)

        monkeypatch.setattr(imarl.training, "forward_cached", recording)
        cfg = toy_config(episodes=1)
        actor, critic, _ = imarl.training._initial_networks(cfg, None, 0)
        collect_episode(cfg, actor, episode_seed=4, global_step=0)
        assert seen_actor_ids == {id(actor)}

    @pytest.mark.parametrize("resolution", [37, 55])
    def test_other_resolutions_run(self, resolution):
        result = train_run(toy_config(episodes=1, resolution=resolution),
                           rng_seed=0)
        assert result.rewards.shape == (1,)

    def test_trajectory_values_filled(self):
        cfg = toy_config(episodes=1)
        actor, critic, _ = imarl.training._initial_networks(cfg, None, 0)
        traj, _, _ = collect_episode(cfg, actor, episode_seed=4, global_step=0)
        assert traj.sample_count > 0
        assert traj.step_rewards.size > 0
        for agent in traj.agents:
            assert agent.states.shape[1] == cfg.encoding_schema.state_length
            assert agent.behavior_probs.shape[1] == 6
