import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xferlab import nn


def make_1d_policy(mean=0.0, log_std=0.0, squash=True, low=-1.0, high=1.0):
    """Policy whose output ignores the state: zero weights, fixed biases."""
    pol = nn.make_policy(1, [low], [high], [3], np.random.default_rng(0), squash=squash)
    arrays = [np.zeros_like(a) for a in pol.net.arrays()]
    arrays[-1] = np.array([mean, log_std])
    return pol.with_net(pol.net.with_arrays(arrays))


class TestForward:
    def test_single_linear_layer(self):
        net = nn.MlpParams((1, 1), ("identity",), (np.array([[2.0]]),), (np.array([1.0]),))
        np.testing.assert_array_equal(nn.mlp_forward(net, np.array([3.0])), [7.0])

    def test_matches_straight_line_recompute(self):
        rng = np.random.default_rng(0)
        net = nn.init_mlp([5, 7, 6, 3], rng, hidden_activation="tanh")
        x = rng.normal(size=(9, 5))
        h = x
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            h = h @ w + b
            if i < 2:
                h = np.tanh(h)
        np.testing.assert_allclose(nn.mlp_forward(net, x), h, rtol=1e-14)

    def test_single_vector_matches_batch(self):
        rng = np.random.default_rng(1)
        net = nn.init_mlp([3, 4, 2], rng)
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(nn.mlp_forward(net, x[2]), nn.mlp_forward(net, x)[2])

    def test_wrong_width(self):
        net = nn.init_mlp([3, 4, 2], np.random.default_rng(1))
        with pytest.raises(ValueError):
            nn.mlp_forward(net, np.ones(4))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            nn.MlpParams((2, 1), ("identity",), (np.zeros((1, 2)),), (np.zeros(1),))
        with pytest.raises(ValueError):
            nn.MlpParams((2, 1), ("sigmoid",), (np.zeros((2, 1)),), (np.zeros(1),))


def sq_out(arrays, net, x):
    return nn.sum(nn.square(nn.mlp_forward(net.with_arrays(arrays), x)))


class TestGrad:
    def test_zero_params_zero_input(self):
        net = nn.init_mlp([3, 4, 2], np.random.default_rng(0))
        zeros = [np.zeros_like(a) for a in net.arrays()]
        grads = nn.grad(sq_out, zeros, net, np.zeros((2, 3)))
        assert all(np.all(g == 0) for g in grads)

    def test_one_layer_closed_form(self):
        # L = sum((xW + b - y)^2): dW = 2 x^T r, db = 2 sum(r)
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
        net = nn.init_mlp([4, 2], rng)

        def loss(arrays):
            return nn.sum(nn.square(nn.mlp_forward(net.with_arrays(arrays), x) - y))

        w, b = net.arrays()
        r = x @ w + b - y
        gw, gb = nn.grad(loss, [w, b])
        np.testing.assert_allclose(gw, 2 * x.T @ r, rtol=1e-12)
        np.testing.assert_allclose(gb, 2 * r.sum(axis=0), rtol=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(["relu", "tanh"]), st.integers(1, 3))
    def test_matches_finite_differences(self, seed, act, depth):
        rng = np.random.default_rng(seed)
        sizes = [3] + [int(rng.integers(2, 6)) for _ in range(depth)] + [2]
        net = nn.init_mlp(sizes, rng, hidden_activation=act)
        x = rng.normal(size=(4, 3))
        analytic = nn.grad(sq_out, net.arrays(), net, x)
        numeric = nn.numerical_grad(sq_out, net.arrays(), net, x)
        assert nn.max_rel_error(analytic, numeric) <= 1e-4

    @pytest.mark.parametrize("name", ["exp", "log", "softplus", "tanh", "minimum", "clip", "concat", "div"])
    def test_elementwise_ops(self, name):
        rng = np.random.default_rng(5)
        a = rng.uniform(0.5, 2.0, size=(3, 4))
        b = rng.uniform(0.5, 2.0, size=(3, 4))
        fns = {
            "exp": lambda p: nn.exp(p[0]),
            "log": lambda p: nn.log(p[0]),
            "softplus": lambda p: nn.softplus(p[0] - p[1]),
            "tanh": lambda p: nn.tanh(p[0] - p[1]),
            "minimum": lambda p: nn.minimum(p[0], p[1]),
            "clip": lambda p: nn.clip(p[0], 0.8, 1.5),
            "concat": lambda p: nn.concat([p[0], p[1]], axis=1),
            "div": lambda p: nn.div(p[0], p[1]),
        }

        def loss(arrays):
            return nn.sum(nn.square(fns[name](arrays)))

        assert nn.max_rel_error(nn.grad(loss, [a, b]), nn.numerical_grad(loss, [a, b])) <= 1e-6

    def test_unsupported_numpy_call(self):
        t = nn.Tensor(np.ones(3))
        with pytest.raises(nn.UnsupportedOpError):
            np.sin(t)
        with pytest.raises(nn.UnsupportedOpError):
            np.linalg.norm(t)

    def test_non_finite_loss(self):
        with pytest.raises(nn.NonFiniteError), np.errstate(invalid="ignore"):
            nn.value_and_grad(lambda p: nn.sum(nn.log(p[0])), [np.array([-1.0])])

    def test_plain_arrays_stay_plain(self):
        out = nn.relu(np.array([-1.0, 2.0]))
        assert type(out) is np.ndarray


class TestAdam:
    def test_zero_gradient(self):
        a = [np.array([1.0, -2.0])]
        st0 = nn.adam_init(a)
        new, st1 = nn.adam_step(a, [np.zeros(2)], st0, 1e-2)
        np.testing.assert_array_equal(new[0], a[0])
        assert st1.step == 1

    def test_descends_against_gradient(self):
        a = [np.array([0.0])]
        state = nn.adam_init(a)
        for _ in range(20):
            a, state = nn.adam_step(a, [np.array([3.0])], state, 1e-2)
        assert a[0][0] < 0

    def test_quadratic_bowl(self):
        rng = np.random.default_rng(0)
        # far enough away that 50 steps of size ~lr cannot overshoot
        target = 5.0 + rng.uniform(size=4)
        x = [np.zeros(4)]
        state = nn.adam_init(x)
        losses = []
        for _ in range(50):
            loss, g = nn.value_and_grad(lambda p: nn.sum(nn.square(p[0] - target)), x)
            losses.append(loss)
            x, state = nn.adam_step(x, g, state, 0.05)
        assert all(b < a for a, b in zip(losses[5:], losses[6:]))

    def test_nan_gradient_aborts(self):
        with pytest.raises(nn.NonFiniteError, match="critic"):
            nn.adam_step([np.zeros(2)], [np.array([0.0, np.nan])], nn.adam_init([np.zeros(2)]), 1e-3,
                         name="critic")

    def test_rejects_bad_lr_and_shapes(self):
        st0 = nn.adam_init([np.zeros(2)])
        with pytest.raises(ValueError):
            nn.adam_step([np.zeros(2)], [np.zeros(2)], st0, 0.0)
        with pytest.raises(ValueError):
            nn.adam_step([np.zeros(2)], [np.zeros(3)], st0, 1e-3)


class TestGaussianPolicy:
    def test_vanishing_std_is_deterministic(self):
        pol = make_1d_policy(mean=0.3, log_std=-30.0)
        s = np.zeros((1, 1))
        acts = [nn.policy_sample(pol, s, np.random.default_rng(k))[0] for k in range(5)]
        for a in acts:
            assert abs(a[0, 0] - math.tanh(0.3)) < 1e-6

    def test_seeded_sampling_is_bit_identical(self):
        pol = nn.make_policy(4, [-1, -1], [1, 1], [8], np.random.default_rng(2))
        s = np.random.default_rng(3).normal(size=(6, 4))
        a1, l1 = nn.policy_sample(pol, s, np.random.default_rng(9))
        a2, l2 = nn.policy_sample(pol, s, np.random.default_rng(9))
        assert a1.tobytes() == a2.tobytes() and l1.tobytes() == l2.tobytes()

    def test_unit_gaussian_entropy(self):
        pol = make_1d_policy(squash=False)
        _, logp = nn.policy_sample(pol, np.zeros((100_000, 1)), np.random.default_rng(0))
        assert abs(-logp.mean() - 0.5 * math.log(2 * math.pi * math.e)) < 0.01

    def test_log_prob_round_trip(self):
        pol = nn.make_policy(3, [-2, 0], [2, 1], [8], np.random.default_rng(4))
        s = np.random.default_rng(5).normal(size=(50, 3))
        a, lp = nn.policy_sample(pol, s, np.random.default_rng(6))
        np.testing.assert_allclose(nn.policy_log_prob(pol, s, a), lp, atol=1e-9)

    def test_symmetry(self):
        pol = make_1d_policy(mean=0.0, log_std=-0.4)
        s = np.zeros((5, 1))
        a = np.linspace(-0.9, 0.9, 5)[:, None]
        np.testing.assert_allclose(nn.policy_log_prob(pol, s, a), nn.policy_log_prob(pol, s, -a), atol=1e-12)

    @pytest.mark.parametrize("mean,log_std", [(0.0, 0.0), (0.7, -0.5), (-1.2, 0.3)])
    def test_density_integrates_to_one(self, mean, log_std):
        pol = make_1d_policy(mean, log_std, low=-2.0, high=3.0)
        grid = np.linspace(-2.0, 3.0, 200_001)[1:-1]
        dens = np.exp(nn.policy_log_prob(pol, np.zeros((grid.size, 1)), grid[:, None]))
        assert 0.999 <= np.trapezoid(dens, grid) <= 1.001

    def test_boundary_action_rejected(self):
        pol = make_1d_policy()
        with pytest.raises(ValueError):
            nn.policy_log_prob(pol, np.zeros((1, 1)), np.array([[1.0]]))

    def test_sample_gradient_matches_finite_differences(self):
        pol = nn.make_policy(3, [-1, -1], [1, 1], [5], np.random.default_rng(8))
        rng = np.random.default_rng(9)
        s, xi = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))

        def loss(arrays):
            a, lp = nn.sample_with_noise(pol, s, xi, pol.net.with_arrays(arrays))
            return nn.mean(nn.sum(nn.square(a), axis=1) + lp)

        arrays = pol.net.arrays()
        assert nn.max_rel_error(nn.grad(loss, arrays), nn.numerical_grad(loss, arrays)) <= 1e-4


class TestCheckpoint:
    def test_round_trip_is_bit_stable(self, tmp_path):
        pol = nn.make_policy(4, [-1, -2], [1, 2], [6, 6], np.random.default_rng(0))
        path = tmp_path / "p.json"
        nn.save_checkpoint(path, {"policy": nn.policy_to_dict(pol)})
        back = nn.policy_from_dict(nn.load_checkpoint(path)["policy"])
        for a, b in zip(pol.net.arrays(), back.net.arrays()):
            assert a.tobytes() == b.tobytes()
        assert back.action_low.tolist() == [-1, -2] and back.log_std_min == pol.log_std_min

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            nn.load_checkpoint(path)
