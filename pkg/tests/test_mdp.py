import dataclasses
from collections import deque
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xferlab.mdp import (BOUND_SLACK, TabularMdp, action_value_bound, bellman_optimality, bound_rhs,
                         finite_horizon_return, forward_return, four_room, greedy, kernel_tv, load_layout,
                         parse_layout, policy_q_values, q_learning, random_mdp, render_layout, transfer_q,
                         tv_distance, value_iteration)


def chain_mdp(n=4, slip=0.2, gamma=0.9):
    """Corridor where action 0 moves left, 1 moves right; moves fail with prob ``slip``."""
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        P[s, 0, left] += 1 - slip
        P[s, 0, s] += slip
        P[s, 1, right] += 1 - slip
        P[s, 1, s] += slip
        R[s] = [-0.1 * s, 0.5 if s == n - 1 else -0.2]
    return TabularMdp(P, R, gamma)


def bfs_distance(grid):
    moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
    dist = {grid.start: 0}
    q = deque([grid.start])
    while q:
        r, c = q.popleft()
        for dr, dc in moves:
            n = (r + dr, c + dc)
            if n not in grid.walls and 0 <= n[0] < grid.height and 0 <= n[1] < grid.width and n not in dist:
                dist[n] = dist[(r, c)] + 1
                q.append(n)
    return dist[grid.goal]


def greedy_path_length(mdp, policy, limit=500):
    s, steps = mdp.start, 0
    while not mdp.terminal[s] and steps < limit:
        s = int(np.argmax(mdp.P[s, policy[s]]))
        steps += 1
    return steps if mdp.terminal[s] else None


class TestTabularMdp:
    def test_rejects_bad_kernel(self):
        P = np.array([[[0.5, 0.4]]] * 2).reshape(2, 1, 2)
        with pytest.raises(ValueError):
            TabularMdp(P, np.zeros((2, 1)), 0.9)

    def test_rejects_gamma_one(self):
        with pytest.raises(ValueError):
            TabularMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), 1.0)

    def test_terminal_must_self_loop_with_zero_reward(self):
        P = np.ones((1, 1, 1))
        with pytest.raises(ValueError):
            TabularMdp(P, np.ones((1, 1)), 0.5, terminal=[True])
        TabularMdp(P, np.zeros((1, 1)), 0.5, terminal=[True])


class TestValueIteration:
    def test_geometric_series(self):
        mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
        assert value_iteration(mdp)[0, 0] == pytest.approx(2.0, abs=1e-8)

    def test_zero_reward_gives_zero(self):
        mdp = random_mdp(4, 2, 0.9, np.random.default_rng(1))
        mdp = TabularMdp(mdp.P, np.zeros_like(mdp.R), 0.9)
        assert np.all(value_iteration(mdp) == 0.0)

    def test_matches_long_sweep(self):
        mdp = random_mdp(5, 3, 0.9, np.random.default_rng(7))
        q = np.zeros_like(mdp.R)
        for _ in range(10_000):
            q = bellman_optimality(mdp, q)
        assert np.max(np.abs(value_iteration(mdp, 1e-10) - q)) < 1e-6

    @pytest.mark.parametrize("tol", [1e-4, 1e-8, 1e-11])
    def test_residual_within_tol(self, tol):
        mdp = random_mdp(6, 3, 0.95, np.random.default_rng(3))
        q = value_iteration(mdp, tol)
        assert np.max(np.abs(bellman_optimality(mdp, q) - q)) <= tol

    def test_rejects_nonpositive_tol(self):
        with pytest.raises(ValueError):
            value_iteration(chain_mdp(), 0.0)


class TestPolicyEvaluation:
    def test_greedy_policy_recovers_optimum(self):
        mdp = random_mdp(5, 3, 0.9, np.random.default_rng(11))
        tol = 1e-8
        q = value_iteration(mdp, tol)
        assert np.max(np.abs(policy_q_values(mdp, greedy(q)) - q)) <= 2 * tol / (1 - mdp.gamma)

    def test_single_state(self):
        # with one state every policy sees the same successor values
        mdp = TabularMdp(np.ones((1, 3, 1)), np.array([[1.0, 2.0, -1.0]]), 0.8)
        np.testing.assert_allclose(policy_q_values(mdp, np.array([1])), value_iteration(mdp, 1e-12), atol=1e-10)

    def test_always_left_matches_monte_carlo(self):
        mdp = chain_mdp()
        policy = np.zeros(4, dtype=int)
        q = policy_q_values(mdp, policy)
        rng = np.random.default_rng(0)
        n, length = 100_000, 200
        cum = np.cumsum(mdp.P, axis=2)
        for s0, a0 in [(3, 1), (2, 0)]:
            s = np.full(n, s0)
            a = np.full(n, a0)
            ret = np.zeros(n)
            disc = 1.0
            for _ in range(length):
                ret += disc * mdp.R[s, a]
                u = rng.random(n)
                s = np.minimum((u[:, None] > cum[s, a]).sum(axis=1), 3)
                a = policy[s]
                disc *= mdp.gamma
            sigma = ret.std() / np.sqrt(n)
            assert abs(ret.mean() - q[s0, a0]) <= 3 * sigma + 1e-9

    def test_rejects_out_of_range_action(self):
        with pytest.raises(ValueError):
            policy_q_values(chain_mdp(), np.array([0, 1, 2, 0]))

    def test_forward_and_backward_returns_agree(self):
        mdp = random_mdp(6, 3, 0.9, np.random.default_rng(5))
        pi = greedy(value_iteration(mdp))
        for h in (0, 1, 7, 50):
            assert forward_return(mdp, pi, h) == pytest.approx(finite_horizon_return(mdp, pi, h)[mdp.start],
                                                              abs=1e-12)


@pytest.fixture(scope="module")
def grids():
    return {n: load_layout(n) for n in ("source", "target1", "target2")}


class TestFourRoom:
    def test_layout_round_trip(self):
        for name in ("source", "target1", "target2"):
            text = resources.files("xferlab.layouts").joinpath(f"{name}.txt").read_text()
            assert render_layout(parse_layout(text)) == text

    @pytest.mark.parametrize("text", ["", "#S#\n#G\n", "SGx\n", "S..\n...\n", "S.G\nG..\n"])
    def test_bad_layouts(self, text):
        with pytest.raises(ValueError):
            parse_layout(text)

    def test_greedy_path_is_shortest(self, grids):
        for grid in grids.values():
            mdp = four_room(grid)
            assert greedy_path_length(mdp, greedy(value_iteration(mdp))) == bfs_distance(grid)

    def test_targets_have_longer_paths(self, grids):
        assert bfs_distance(grids["target1"]) > bfs_distance(grids["source"])
        assert bfs_distance(grids["target2"]) > bfs_distance(grids["source"])

    def test_enclosed_goal_rejected(self):
        text = "#####\n#S..#\n###.#\n#G#.#\n#####\n"
        with pytest.raises(ValueError, match="unreachable"):
            four_room(parse_layout(text))

    def test_every_state_reaches_goal_under_uniform_policy(self, grids):
        for grid in grids.values():
            mdp = four_room(dataclasses.replace(grid, slip_prob=0.1))
            reach = (mdp.P.mean(axis=1) > 0).astype(float)
            closure = np.eye(mdp.n_states)
            for _ in range(mdp.n_states):
                closure = np.minimum(closure + closure @ reach, 1.0)
            closure = closure > 0
            goal = int(np.flatnonzero(mdp.terminal)[0])
            assert closure[:, goal].all()

    def test_transfer_q_maps_cells(self, grids):
        src, tgt = four_room(grids["source"]), four_room(grids["target1"])
        q = value_iteration(src)
        mapped = transfer_q(q, src, tgt)
        for j, cell in enumerate(tgt.cells):
            if cell in src.cells:
                np.testing.assert_array_equal(mapped[j], q[src.cells.index(cell)])
            else:
                assert np.all(mapped[j] == 0)


class TestQLearning:
    def test_optimal_init_stays_optimal(self):
        mdp = four_room(load_layout("target1"))
        q_star = value_iteration(mdp)
        res = q_learning(mdp, q_star, lr=0.5, epsilon=0.0, horizon=100, seed=0, max_steps=400, eval_every=10)
        best = finite_horizon_return(mdp, greedy(q_star), 100)[mdp.start]
        np.testing.assert_allclose(res.eval_returns, best, atol=1e-12)

    def test_scratch_learns_source_task(self):
        mdp = four_room(load_layout("source"))
        shortest = bfs_distance(load_layout("source"))
        hits = 0
        for seed in range(20):
            res = q_learning(mdp, np.zeros_like(mdp.R), lr=0.9, epsilon=0.1, horizon=100, seed=seed,
                             episodes=300, eval_every=1000)
            n = greedy_path_length(mdp, greedy(res.q), limit=100)
            hits += n is not None and n >= shortest
        assert hits >= 19

    def test_transfer_beats_scratch_early(self):
        src, tgt = four_room(load_layout("source")), four_room(load_layout("target1"))
        q0 = transfer_q(value_iteration(src), src, tgt)
        kw = dict(lr=0.9, epsilon=0.1, horizon=100, max_steps=600, eval_every=10, eval_horizon=50)
        tau = np.mean([q_learning(tgt, q0, seed=s, **kw).eval_returns
                       - q_learning(tgt, np.zeros_like(tgt.R), seed=s, **kw).eval_returns for s in range(10)], axis=0)
        assert np.all(tau[:40] >= 0)

    @pytest.mark.parametrize("kw", [dict(lr=0.0), dict(lr=1.5), dict(epsilon=-0.1), dict(epsilon=2.0)])
    def test_rejects_bad_hyperparameters(self, kw):
        mdp = chain_mdp()
        args = dict(lr=0.5, epsilon=0.1, horizon=10, seed=0, max_steps=10) | kw
        with pytest.raises(ValueError):
            q_learning(mdp, np.zeros_like(mdp.R), **args)

    def test_seeded(self):
        mdp = chain_mdp()
        a = q_learning(mdp, np.zeros_like(mdp.R), lr=0.5, epsilon=0.3, horizon=20, seed=4, max_steps=300)
        b = q_learning(mdp, np.zeros_like(mdp.R), lr=0.5, epsilon=0.3, horizon=20, seed=4, max_steps=300)
        np.testing.assert_array_equal(a.q, b.q)


def _kernel(n_s, n_a, seed):
    return np.random.default_rng(seed).dirichlet(np.ones(n_s), size=(n_s, n_a))


class TestTotalVariation:
    def test_identical(self):
        mdp = chain_mdp()
        assert tv_distance(mdp, mdp) == 0.0

    def test_disjoint(self):
        a = np.array([[[1.0, 0.0]], [[1.0, 0.0]]])
        b = np.array([[[0.0, 1.0]], [[0.0, 1.0]]])
        assert kernel_tv(a, b) == 1.0

    def test_hand_value(self):
        assert kernel_tv(np.array([[[0.7, 0.3]]]), np.array([[[0.5, 0.5]]])) == pytest.approx(0.2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            tv_distance(chain_mdp(4), chain_mdp(5))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 10_000))
    def test_metric_axioms(self, n_s, n_a, seed):
        p, q, r = _kernel(n_s, n_a, seed), _kernel(n_s, n_a, seed + 1), _kernel(n_s, n_a, seed + 2)
        assert kernel_tv(p, q) == pytest.approx(kernel_tv(q, p))
        assert kernel_tv(p, p) == 0.0
        assert 0.0 <= kernel_tv(p, q) <= 1.0 + 1e-12
        assert kernel_tv(p, r) <= kernel_tv(p, q) + kernel_tv(q, r) + 1e-12


class TestActionValueBound:
    def test_identical_mdps(self):
        mdp = random_mdp(4, 2, 0.9, np.random.default_rng(0))
        rep = action_value_bound(mdp, mdp)
        assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.holds

    def test_reward_shift(self):
        mdp = random_mdp(4, 2, 0.9, np.random.default_rng(2))
        c = 0.3
        shifted = TabularMdp(mdp.P, mdp.R + c, mdp.gamma)
        rep = action_value_bound(mdp, shifted)
        assert rep.delta_tv == 0.0
        rew_term = 2 * c / (1 - mdp.gamma)
        assert rep.rhs == pytest.approx(rew_term)
        assert rep.holds

    def test_domain_mismatch(self):
        with pytest.raises(ValueError):
            action_value_bound(chain_mdp(4), chain_mdp(5))

    def test_gamma_mismatch(self):
        with pytest.raises(ValueError):
            action_value_bound(chain_mdp(gamma=0.9), chain_mdp(gamma=0.8))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 0.5),
           st.sampled_from([0.5, 0.9, 0.95]))
    def test_rhs_monotone_in_reward_gap(self, dr, extra, dtv, rs, rt, gamma):
        assert bound_rhs(dr + extra, dtv, rs, rt, gamma) >= bound_rhs(dr, dtv, rs, rt, gamma)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 3), st.sampled_from([0.5, 0.9, 0.95]), st.integers(0, 2**31))
    def test_bound_holds_on_random_pairs(self, n_s, n_a, gamma, seed):
        rng = np.random.default_rng(seed)
        rep = action_value_bound(random_mdp(n_s, n_a, gamma, rng), random_mdp(n_s, n_a, gamma, rng))
        assert rep.lhs <= rep.rhs + BOUND_SLACK
        assert rep.holds == (rep.lhs <= rep.rhs + BOUND_SLACK)
