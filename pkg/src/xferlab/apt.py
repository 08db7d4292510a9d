"""Advantage-weighted policy transfer on top of SAC.

The target policy is regularised toward a source policy by a cross-entropy
term whose weight ``beta`` is the exponentiated soft-value gap between the
two policies under the target critic. The source policy itself keeps
training on target data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .envs import EnvSpec
from .sac import (AlgoConfig, Batch, SacLearner, TrainResult, critic_update, learner_to_dict,
                  make_learner, min_q, policy_update_sac, rng_streams, run_training, sac_policy_loss)
from .traces import TransferTrace

MAX_RESAMPLES = 100


@dataclass
class AptLearner:
    base: SacLearner
    source_policy: nn.GaussianPolicy
    source_opt: nn.AdamState
    source_lr: float
    aux_rng: np.random.Generator
    beta_clamp: tuple = (-10.0, 10.0)
    beta_mode: str = "adaptive"
    fixed_beta: float = 1.0
    gap_mode: str = "soft"
    beta_history: list = field(default_factory=list)

    def __post_init__(self):
        pol = self.base.policy
        if (self.source_policy.state_dim != pol.state_dim or self.source_policy.action_dim != pol.action_dim):
            raise ValueError("source and target policies must share state/action dimensions")
        if self.source_lr < 0:
            raise ValueError("source_lr must be non-negative")
        if self.beta_mode not in ("adaptive", "fixed", "zero"):
            raise ValueError(f"unknown beta_mode {self.beta_mode!r}")
        if self.gap_mode not in ("soft", "q_only"):
            raise ValueError(f"unknown gap_mode {self.gap_mode!r}")
        if self.beta_mode == "fixed" and not self.fixed_beta >= 0:
            raise ValueError("fixed_beta must be non-negative")

    @property
    def policy(self) -> nn.GaussianPolicy:
        return self.base.policy


def make_apt_learner(source_policy: nn.GaussianPolicy, cfg: AlgoConfig, rngs: dict) -> AptLearner:
    """Critics start fresh; the target policy starts as a copy of the source
    unless ``cfg.init_from_source`` is off."""
    init = source_policy if cfg.init_from_source else None
    base = make_learner(source_policy.state_dim, source_policy.action_low, source_policy.action_high,
                        cfg, rngs["init"], rngs["learner"], init)
    return AptLearner(base, source_policy, nn.adam_init(source_policy.net.arrays()), cfg.source_lr,
                      rngs["aux"], cfg.beta_clamp, cfg.beta_mode, cfg.fixed_beta, cfg.gap_mode)


def gap_terms(learner: AptLearner, s: np.ndarray, rng: np.random.Generator | None = None):
    """Per-sample ``(source_term, target_term)``; their difference is the gap."""
    rng = rng or learner.aux_rng
    base = learner.base
    a_mu, logp_mu = nn.policy_sample(learner.source_policy, s, rng)
    a_pi, logp_pi = nn.policy_sample(base.policy, s, rng)
    q_mu, q_pi = min_q(base, s, a_mu), min_q(base, s, a_pi)
    if learner.gap_mode == "q_only":
        return q_mu, q_pi
    return q_mu - base.alpha * logp_mu, q_pi - base.alpha * logp_pi


def advantage_gap(learner: AptLearner, batch: Batch, rng: np.random.Generator | None = None) -> float:
    """Batch mean of ``[Q(s, a_mu) - alpha log mu(a_mu|s)] - [Q(s, a_pi) - alpha log pi(a_pi|s)]``.

    The shared state-value baseline of the two advantages cancels. With
    ``gap_mode="q_only"`` the entropy terms are dropped.
    """
    if len(batch.s) == 0:
        raise ValueError("empty batch")
    src, tgt = gap_terms(learner, batch.s, rng)
    gap = float(np.mean(src - tgt))
    if not np.isfinite(gap):
        raise nn.NonFiniteError("advantage gap is not finite")
    return gap


def beta(gap: float, clamp=(-10.0, 10.0)) -> float:
    if not np.isfinite(gap):
        raise ValueError("gap must be finite")
    return float(np.exp(np.clip(gap, clamp[0], clamp[1])))


def sample_inside(policy: nn.GaussianPolicy, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample actions, redrawing any that round onto the squashing boundary."""
    a, _ = nn.policy_sample(policy, s, rng)
    if not policy.squash:
        return a
    for _ in range(MAX_RESAMPLES):
        bad = np.any(np.abs((a - policy.center) / policy.half_range) >= 1.0, axis=-1)
        if not bad.any():
            return a
        a[bad], _ = nn.policy_sample(policy, s[bad], rng)
    raise nn.NonFiniteError("source policy keeps sampling boundary actions")


def cross_entropy_loss(net_arrays, policy: nn.GaussianPolicy, s: np.ndarray, a_src: np.ndarray):
    """``mean_s[-log pi(a_src|s)]`` for source actions drawn beforehand."""
    return -nn.mean(nn.policy_log_prob(policy, s, a_src, policy.net.with_arrays(net_arrays)))


def cross_entropy(target_policy: nn.GaussianPolicy, source_policy: nn.GaussianPolicy, s,
                  rng: np.random.Generator) -> float:
    """Monte Carlo estimate of ``E_{a~mu}[-log pi(a|s)]`` with one sample per state."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if len(s) == 0:
        raise ValueError("empty batch")
    a = sample_inside(source_policy, s, rng)
    return float(cross_entropy_loss(target_policy.net.arrays(), target_policy, s, a))


def combined_loss(net_arrays, learner: AptLearner, s, xi, a_src, beta_t: float):
    pol = learner.base.policy
    return (sac_policy_loss(net_arrays, pol, learner.base, s, xi)
            + beta_t * cross_entropy_loss(net_arrays, pol, s, a_src))


def current_beta(learner: AptLearner, batch: Batch) -> float:
    if learner.beta_mode == "zero":
        return 0.0
    if learner.beta_mode == "fixed":
        return float(learner.fixed_beta)
    return beta(advantage_gap(learner, batch), learner.beta_clamp)


def apt_policy_update(learner: AptLearner, batch: Batch):
    """One Adam step on ``J1 + beta * J2`` with ``beta`` held constant.

    Returns ``(J1, J2, beta)``. With ``beta == 0`` this is exactly the SAC
    policy step, consuming the same random numbers.
    """
    if len(batch.s) == 0:
        raise ValueError("empty batch")
    base = learner.base
    b = current_beta(learner, batch)
    if b == 0.0:
        j1 = policy_update_sac(base, batch)
        learner.beta_history.append(b)
        return j1, float("nan"), b
    pol = base.policy
    xi = base.rng.standard_normal((len(batch.s), pol.action_dim))
    a_src = sample_inside(learner.source_policy, batch.s, learner.aux_rng)
    arrays = pol.net.arrays()
    j1 = float(sac_policy_loss(arrays, pol, base, batch.s, xi))
    j2 = float(cross_entropy_loss(arrays, pol, batch.s, a_src))
    for name, v in (("J1 (SAC policy loss)", j1), ("J2 (cross-entropy)", j2), ("beta", b)):
        if not np.isfinite(v):
            raise nn.NonFiniteError(f"{name} is {v}")
    _, grads = nn.value_and_grad(combined_loss, arrays, learner, batch.s, xi, a_src, b)
    new, base.policy_opt = nn.adam_step(arrays, grads, base.policy_opt, base.lr, name="policy")
    base.policy = pol.with_net(pol.net.with_arrays(new))
    base.updates += 1
    learner.beta_history.append(b)
    return j1, j2, b


def source_sync_update(learner: AptLearner, batch: Batch) -> float:
    """One SAC policy step for the source policy against the target critic."""
    if len(batch.s) == 0:
        raise ValueError("empty batch")
    src = learner.source_policy
    xi = learner.aux_rng.standard_normal((len(batch.s), src.action_dim))
    arrays = src.net.arrays()
    loss, grads = nn.value_and_grad(sac_policy_loss, arrays, src, learner.base, batch.s, xi)
    if learner.source_lr > 0:
        new, learner.source_opt = nn.adam_step(arrays, grads, learner.source_opt, learner.source_lr,
                                               name="source policy")
        learner.source_policy = src.with_net(src.net.with_arrays(new))
    return loss


def apt_update(learner: AptLearner, batch: Batch, source_sync: bool = True) -> float:
    """Full gradient step: source sync, critic, then the regularised policy step."""
    if source_sync:
        source_sync_update(learner, batch)
    critic_update(learner.base, batch)
    _, _, b = apt_policy_update(learner, batch)
    return b


def train_apt(source_policy: nn.GaussianPolicy, spec: EnvSpec, cfg: AlgoConfig, seed: int,
              algo_id: str = "apt") -> TrainResult:
    """Transfer ``source_policy`` to ``spec``. The trace logs the mean beta
    since the previous evaluation."""
    if source_policy.state_dim != spec.state_dim or source_policy.action_dim != spec.action_dim:
        raise ValueError("source policy does not match the target state/action dimensions")
    rngs = rng_streams(seed)
    learner = make_apt_learner(source_policy, cfg, rngs)
    trace = TransferTrace(algo_id, seed)
    mark = [0]

    def beta_since():
        new = learner.beta_history[mark[0]:]
        mark[0] = len(learner.beta_history)
        return float(np.mean(new)) if new else None

    def update(batch):
        apt_update(learner, batch, cfg.source_sync)

    buf = run_training(spec, cfg, seed, lambda: learner.policy, update, trace, rngs, beta_since)
    return TrainResult(learner, trace, buf)


def apt_to_dict(learner: AptLearner) -> dict:
    d = learner_to_dict(learner.base)
    d["source_policy"] = nn.policy_to_dict(learner.source_policy)
    d["apt"] = {"source_lr": learner.source_lr, "beta_clamp": list(learner.beta_clamp),
                "beta_mode": learner.beta_mode, "fixed_beta": learner.fixed_beta,
                "gap_mode": learner.gap_mode, "beta_updates": len(learner.beta_history)}
    return d
