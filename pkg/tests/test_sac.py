import copy
import dataclasses

import numpy as np
import pytest
from scipy import stats

from xferlab import nn
from xferlab.envs import EnvSpec, Transition
from xferlab.sac import (AlgoConfig, Batch, ReplayBuffer, controller_threshold, critic_targets,
                         critic_update, evaluate, make_learner, min_q, policy_update_sac, q_value,
                         rng_streams, sac_policy_loss, soft_value, train_sac)

SMALL = AlgoConfig(total_steps=300, hidden_size=16, update_after=100, steps_per_iter=50, updates_per_iter=5,
                   eval_interval=100, eval_episodes=2, batch_size=16)


def learner_1d(cfg=AlgoConfig(hidden_size=16), seed=0):
    return make_learner(1, [-1.0], [1.0], cfg, np.random.default_rng(seed), np.random.default_rng(seed + 1))


def abs_critic(a_star: float) -> nn.MlpParams:
    """Q(s, a) = -|a - a_star| on (s, a) in R^2, exactly representable with ReLUs."""
    w1 = np.array([[0.0, 0.0], [1.0, -1.0]])
    b1 = np.array([-a_star, a_star])
    return nn.MlpParams((2, 2, 1), ("relu", "identity"), (w1, np.array([[-1.0], [-1.0]])),
                        (b1, np.zeros(1)))


def tr(k):
    return Transition(np.full(2, k, float), np.array([k]), float(k), np.full(2, k + 1.0), False)


class TestReplayBuffer:
    def test_fifo_overwrite(self):
        buf = ReplayBuffer(3, 2, 1)
        for k in range(5):
            buf.add(tr(k))
        assert len(buf) == 3
        assert sorted(buf.r.tolist()) == [2.0, 3.0, 4.0]

    def test_uniform_sampling(self):
        buf = ReplayBuffer(10, 2, 1)
        for k in range(10):
            buf.add(tr(k))
        idx = buf.sample_indices(20_000, np.random.default_rng(0))
        assert stats.chisquare(np.bincount(idx, minlength=10)).pvalue > 0.01

    def test_sample_rows_are_consistent(self):
        buf = ReplayBuffer(8, 2, 1)
        for k in range(6):
            buf.add(tr(k))
        b = buf.sample(50, np.random.default_rng(1))
        np.testing.assert_array_equal(b.s[:, 0], b.r)
        np.testing.assert_array_equal(b.s2[:, 0], b.r + 1)

    def test_empty(self):
        with pytest.raises(ValueError):
            ReplayBuffer(4, 2, 1).sample(1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            ReplayBuffer(0, 2, 1)

    def test_truncation_stored_as_non_terminal(self):
        buf = ReplayBuffer(2, 2, 1)
        buf.add(Transition(np.zeros(2), np.zeros(1), 0.0, np.zeros(2), True, truncated=True))
        buf.add(Transition(np.zeros(2), np.zeros(1), 0.0, np.zeros(2), True))
        assert buf.terminal.tolist() == [0.0, 1.0]


def batch_1d(n=32, seed=0, terminal=0.0):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, size=(n, 1))
    return Batch(s, rng.uniform(-0.9, 0.9, size=(n, 1)), rng.normal(size=n), s.copy(), np.full(n, terminal))


class TestCritic:
    def test_zero_discount_target_is_reward(self):
        learner = learner_1d(AlgoConfig(hidden_size=8, gamma=0.0))
        b = batch_1d()
        np.testing.assert_array_equal(critic_targets(learner, b), b.r)

    def test_terminal_target_is_reward(self):
        learner = learner_1d()
        b = batch_1d(terminal=1.0)
        np.testing.assert_array_equal(critic_targets(learner, b), b.r)

    def test_twin_minimum(self):
        learner = learner_1d()
        b = batch_1d()
        learner.q2 = learner.q1
        np.testing.assert_array_equal(min_q(learner, b.s, b.a), q_value(learner.q1, b.s, b.a))

    def test_twin_order_does_not_matter(self):
        learner = learner_1d()
        swapped = copy.deepcopy(learner)
        swapped.q1_targ, swapped.q2_targ = learner.q2_targ, learner.q1_targ
        b = batch_1d()
        np.testing.assert_array_equal(critic_targets(learner, b), critic_targets(swapped, b))

    def test_matches_fixed_policy_value(self):
        # s' = s, r = s + a/2, gamma = 1/2, alpha = 0:
        # Q(s, a) = s + a/2 + (s + E_pi[a|s]/2)
        cfg = AlgoConfig(hidden_size=32, gamma=0.5, alpha=0.0, polyak=0.05, lr=1e-3)
        learner = learner_1d(cfg, seed=3)
        rng = np.random.default_rng(4)
        for _ in range(3000):
            s = rng.uniform(-1, 1, size=(64, 1))
            a = rng.uniform(-0.95, 0.95, size=(64, 1))
            critic_update(learner, Batch(s, a, s[:, 0] + 0.5 * a[:, 0], s, np.zeros(64)))
        s = np.linspace(-0.8, 0.8, 9)[:, None]
        a = np.zeros_like(s)
        mean_a = np.array([nn.policy_sample(learner.policy, np.repeat(x[None], 20_000, 0), rng)[0].mean()
                           for x in s])
        truth = 2 * s[:, 0] + 0.5 * mean_a
        np.testing.assert_allclose(min_q(learner, s, a), truth, atol=0.2)

    def test_targets_move_slowly(self):
        learner = learner_1d(AlgoConfig(hidden_size=8, polyak=0.01))
        before = learner.q1_targ.arrays()
        critic_update(learner, batch_1d())
        moved = [np.abs(t - b).max() for t, b in zip(learner.q1_targ.arrays(), before)]
        step = [np.abs(c - b).max() for c, b in zip(learner.q1.arrays(), before)]
        np.testing.assert_allclose(moved, 0.01 * np.array(step), rtol=1e-9)


class TestPolicy:
    def test_moves_toward_best_action(self):
        learner = learner_1d(AlgoConfig(hidden_size=16, alpha=0.01, lr=3e-3))
        learner.q1 = learner.q2 = learner.q1_targ = learner.q2_targ = abs_critic(0.5)
        b = batch_1d()
        start = abs(nn.deterministic_action(learner.policy, b.s) - 0.5).mean()
        for _ in range(500):
            policy_update_sac(learner, b)
        end = abs(nn.deterministic_action(learner.policy, b.s) - 0.5).mean()
        assert end < 0.1 < start

    def test_flat_critic_gives_no_gradient(self):
        learner = learner_1d(AlgoConfig(hidden_size=8, alpha=0.0))
        flat = nn.MlpParams((2, 1), ("identity",), (np.array([[1.0], [0.0]]),), (np.array([3.0]),))
        learner.q1 = learner.q2 = flat
        b = batch_1d()
        xi = np.random.default_rng(0).standard_normal((len(b.r), 1))
        grads = nn.grad(sac_policy_loss, learner.policy.net.arrays(), learner.policy, learner, b.s, xi)
        assert max(np.abs(g).max() for g in grads) < 1e-12

    def test_soft_value_quadrature_vs_sampling(self):
        learner = learner_1d(AlgoConfig(hidden_size=16, alpha=0.3), seed=5)
        s = np.array([[0.3], [-0.6]])
        quad = soft_value(learner, s, n_nodes=10)
        rng = np.random.default_rng(0)
        for i in range(2):
            rep = np.repeat(s[i:i + 1], 100_000, axis=0)
            a, lp = nn.policy_sample(learner.policy, rep, rng)
            mc = float(np.mean(min_q(learner, rep, a) - learner.alpha * lp))
            assert abs(quad[i] - mc) <= 0.05 * abs(mc)

    def test_empty_batch(self):
        learner = learner_1d()
        empty = Batch(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), np.zeros((0, 1)), np.zeros(0))
        with pytest.raises(ValueError):
            policy_update_sac(learner, empty)
        with pytest.raises(ValueError):
            critic_update(learner, empty)


class TestTraining:
    def test_zero_reward_evaluates_to_zero(self):
        pol = nn.make_policy(4, [-1, -1], [1, 1], [8], np.random.default_rng(0))
        mean, rets = evaluate(pol, EnvSpec(reward_scale=0.0), 3, 0)
        assert mean == 0.0 and np.all(rets == 0)

    def test_evaluation_is_deterministic(self):
        pol = nn.make_policy(4, [-1, -1], [1, 1], [8], np.random.default_rng(0))
        assert evaluate(pol, EnvSpec(), 4, 9)[1].tobytes() == evaluate(pol, EnvSpec(), 4, 9)[1].tobytes()

    def test_zero_steps_is_the_initial_policy(self):
        cfg = SMALL.replace(total_steps=0)
        res = train_sac(EnvSpec(), cfg, 3)
        rngs = rng_streams(3)
        pol = nn.make_policy(4, [-1, -1], [1, 1], [16, 16], rngs["init"])
        assert res.trace.rho.tolist() == [evaluate(pol, EnvSpec(), 2, cfg.eval_seed + 3)[0]]

    def test_same_seed_same_run(self):
        a, b = train_sac(EnvSpec(), SMALL, 1), train_sac(EnvSpec(), SMALL, 1)
        assert a.trace.rho.tobytes() == b.trace.rho.tobytes()
        for x, y in zip(a.learner.policy.net.arrays(), b.learner.policy.net.arrays()):
            assert x.tobytes() == y.tobytes()
        assert a.trace.steps.tolist() == [0, 100, 200, 300]
        assert a.learner.updates == 5 * 5

    def test_different_seeds_differ(self):
        a, b = train_sac(EnvSpec(), SMALL, 1), train_sac(EnvSpec(), SMALL, 2)
        assert a.trace.rho.tobytes() != b.trace.rho.tobytes()

    def test_stops_at_threshold(self):
        res = train_sac(EnvSpec(), SMALL, 1, stop_at=-np.inf)
        assert res.trace.steps.tolist() == [0] and len(res.buffer) == 0

    def test_controller_threshold(self):
        th, ref = controller_threshold(EnvSpec())
        assert ref == pytest.approx(-32.321264647156674, abs=1e-9)
        assert th == pytest.approx(ref - 0.25 * abs(ref))


class TestConfig:
    @pytest.mark.parametrize("bad", [{"alpha": -1.0}, {"gamma": 1.0}, {"polyak": 0.0}, {"lr": 0.0},
                                     {"beta_mode": "auto"}, {"gap_mode": "hard"},
                                     {"beta_clamp": (1.0, -1.0)}, {"batch_size": 0}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            dataclasses.replace(AlgoConfig(), **bad)

    def test_round_trip(self):
        cfg = AlgoConfig(hidden_size=7, beta_clamp=(-3, 3))
        assert AlgoConfig(**cfg.to_dict()) == cfg
