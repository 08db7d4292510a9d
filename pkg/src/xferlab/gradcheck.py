"""Finite-difference check of every training loss against reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .apt import cross_entropy_loss, sample_inside
from .sac import AlgoConfig, Batch, critic_loss, critic_targets, make_learner, sac_policy_loss
from .tasksim import encoder_decoder, regression_loss

LOSSES = ("sac_policy", "cross_entropy", "critic", "dynamics_model", "reward_model")
TOLERANCE = 1e-4
# Central differences are meaningless across a ReLU or min() kink, so test
# points closer than this to one are redrawn.
KINK_MARGIN = 1e-3
MAX_DRAWS = 50


@dataclass(frozen=True)
class GradCase:
    loss: str
    config: int
    rel_error: float

    @property
    def ok(self) -> bool:
        return self.rel_error <= TOLERANCE


def _random_setup(rng: np.random.Generator):
    state_dim = int(rng.integers(2, 6))
    action_dim = int(rng.integers(1, 4))
    batch = int(rng.integers(3, 9))
    hidden = int(rng.integers(3, 9))
    cfg = AlgoConfig(hidden_size=hidden, hidden_layers=int(rng.integers(1, 3)),
                     alpha=float(rng.uniform(0.0, 0.5)), gamma=float(rng.uniform(0.5, 0.99)))
    high = rng.uniform(0.5, 2.0, size=action_dim)
    learner = make_learner(state_dim, -high, high, cfg, rng, np.random.default_rng(rng.integers(2**32)))
    s = rng.normal(size=(batch, state_dim))
    a = rng.uniform(-high, high, size=(batch, action_dim)) * 0.9
    b = Batch(s, a, rng.normal(size=batch), rng.normal(size=(batch, state_dim)),
              (rng.random(batch) < 0.3).astype(float))
    return learner, b, hidden


def _check(fn, arrays, *args) -> float:
    return nn.max_rel_error(nn.grad(fn, arrays, *args), nn.numerical_grad(fn, arrays, *args))


def relu_margin(net: nn.MlpParams, x: np.ndarray) -> float:
    """Smallest ``|pre-activation|`` feeding a ReLU when ``net`` runs on ``x``."""
    h, worst = np.asarray(x, dtype=np.float64), np.inf
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w + b
        if act == "relu":
            worst = min(worst, float(np.abs(z).min()))
        h = nn.mlp_forward(nn.MlpParams((w.shape[0], w.shape[1]), (act,), (w,), (b,)), h)
    return worst


def _critic_margin(learner, s, a) -> float:
    x = np.concatenate([s, a], axis=1)
    gap = np.abs(nn.mlp_forward(learner.q1, x) - nn.mlp_forward(learner.q2, x)).min()
    return min(relu_margin(learner.q1, x), relu_margin(learner.q2, x), float(gap))


def _draw(make, margin_of, rng):
    for _ in range(MAX_DRAWS):
        case = make(rng)
        if margin_of(case) >= KINK_MARGIN:
            return case
    raise RuntimeError("could not draw a test point away from the loss kinks")


def check_config(config: int, seed: int = 0) -> list:
    """All losses for one randomly drawn architecture and batch."""
    rng = np.random.default_rng([seed, config])
    out = []

    def setup(r):
        learner, batch, hidden = _random_setup(r)
        xi = r.standard_normal((len(batch.r), learner.policy.action_dim))
        return learner, batch, hidden, xi

    def setup_margin(case):
        learner, batch, _, xi = case
        a, _ = nn.sample_with_noise(learner.policy, batch.s, xi)
        return min(relu_margin(learner.policy.net, batch.s), _critic_margin(learner, batch.s, a),
                   _critic_margin(learner, batch.s, batch.a))

    learner, batch, hidden, xi = _draw(setup, setup_margin, rng)
    pol = learner.policy
    out.append(GradCase("sac_policy", config, _check(sac_policy_loss, pol.net.arrays(), pol, learner, batch.s, xi)))
    source = nn.make_policy(pol.state_dim, pol.action_low, pol.action_high, [hidden], rng)
    a_src = sample_inside(source, batch.s, rng)
    out.append(GradCase("cross_entropy", config, _check(cross_entropy_loss, pol.net.arrays(), pol, batch.s, a_src)))
    y = critic_targets(learner, batch)
    out.append(GradCase("critic", config, _check(critic_loss, learner.q1.arrays() + learner.q2.arrays(),
                                                 learner, batch, y)))
    x = np.concatenate([batch.s, batch.a], axis=1)
    for kind, y_dim in (("dynamics_model", batch.s.shape[1]), ("reward_model", 1)):
        net = _draw(lambda r: encoder_decoder(x.shape[1], y_dim, max(4, batch.s.shape[1]), hidden, r),
                    lambda n: relu_margin(n, x), rng)
        target = rng.normal(size=(len(x), y_dim))
        out.append(GradCase(kind, config, _check(regression_loss, net.arrays(), net, x, target)))
    return out


def run_suite(n_configs: int = 10, seed: int = 0) -> list:
    """``GradCase`` per (loss, config); passing means relative error <= 1e-4."""
    if n_configs < 1:
        raise ValueError("n_configs must be >= 1")
    return [case for k in range(n_configs) for case in check_config(k, seed)]
