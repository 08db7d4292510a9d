import numpy as np
import pytest

from xferlab import gradcheck, nn


class TestLossGradients:
    @pytest.mark.parametrize("config", range(10))
    def test_every_loss_matches_finite_differences(self, config):
        cases = gradcheck.check_config(config)
        assert {c.loss for c in cases} == set(gradcheck.LOSSES)
        for c in cases:
            assert c.rel_error <= 1e-4, c

    def test_suite_size(self):
        assert len(gradcheck.run_suite(2, seed=7)) == 2 * len(gradcheck.LOSSES)
        with pytest.raises(ValueError):
            gradcheck.run_suite(0)


class TestReluMargin:
    def test_hand_case(self):
        net = nn.MlpParams((1, 2, 1), ("relu", "identity"),
                           (np.array([[1.0, -2.0]]), np.array([[1.0], [1.0]])),
                           (np.array([0.5, 0.0]), np.array([0.0])))
        # pre-activations at x=1: 1.5 and -2.0
        assert gradcheck.relu_margin(net, np.array([[1.0]])) == 1.5

    def test_no_relu(self):
        net = nn.init_mlp([2, 3, 1], np.random.default_rng(0), hidden_activation="tanh")
        assert gradcheck.relu_margin(net, np.zeros((1, 2))) == np.inf
