"""Soft actor-critic with twin critics, Polyak targets and a fixed entropy weight."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import nn
from .envs import EnvSpec, Transition, env_reset, env_step, proportional_controller, rollout_returns
from .traces import TransferTrace


@dataclass(frozen=True)
class AlgoConfig:
    """Learner and loop settings. Defaults follow the usual SAC recipe with
    lr 3e-4, 100k buffer, batch 64 and 50 updates per iteration."""
    total_steps: int = 20000
    hidden_size: int = 200
    hidden_layers: int = 2
    lr: float = 3e-4
    buffer_size: int = 100_000
    batch_size: int = 64
    updates_per_iter: int = 50
    steps_per_iter: int = 50
    update_after: int = 1000
    alpha: float = 0.2
    gamma: float = 0.99
    polyak: float = 0.005
    eval_interval: int = 1000
    eval_episodes: int = 10
    eval_seed: int = 12345
    # transfer-only settings
    source_lr: float = 3e-4
    beta_mode: str = "adaptive"
    fixed_beta: float = 1.0
    beta_clamp: tuple = (-10.0, 10.0)
    gap_mode: str = "soft"
    init_from_source: bool = True
    source_sync: bool = True

    def __post_init__(self):
        object.__setattr__(self, "beta_clamp", tuple(float(v) for v in self.beta_clamp))
        if self.total_steps < 0 or self.batch_size < 1 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("total_steps >= 0, batch_size, eval_interval, eval_episodes >= 1 required")
        if self.steps_per_iter < 1 or self.updates_per_iter < 0:
            raise ValueError("steps_per_iter >= 1 and updates_per_iter >= 0 required")
        if not self.alpha >= 0 or not 0 < self.polyak <= 1 or not 0 <= self.gamma < 1:
            raise ValueError("alpha >= 0, polyak in (0, 1], gamma in [0, 1) required")
        if self.lr <= 0 or self.source_lr < 0:
            raise ValueError("lr must be positive and source_lr non-negative")
        if self.beta_mode not in ("adaptive", "fixed", "zero"):
            raise ValueError(f"unknown beta_mode {self.beta_mode!r}")
        if self.gap_mode not in ("soft", "q_only"):
            raise ValueError(f"unknown gap_mode {self.gap_mode!r}")
        if self.beta_clamp[0] > self.beta_clamp[1]:
            raise ValueError("beta_clamp must be (lo, hi) with lo <= hi")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["beta_clamp"] = list(self.beta_clamp)
        return d

    def replace(self, **kw) -> "AlgoConfig":
        return dataclasses.replace(self, **kw)


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    terminal: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, tr: Transition) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s2[i] = tr.s, tr.a, tr.r, tr.s_next
        self.terminal[i] = float(tr.terminal)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(n, rng)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.terminal[idx])


@dataclass
class SacLearner:
    policy: nn.GaussianPolicy
    q1: nn.MlpParams
    q2: nn.MlpParams
    q1_targ: nn.MlpParams
    q2_targ: nn.MlpParams
    alpha: float
    gamma: float
    polyak: float
    lr: float
    policy_opt: nn.AdamState
    critic_opt: nn.AdamState
    rng: np.random.Generator
    updates: int = 0

    def __post_init__(self):
        if self.alpha < 0 or not 0 < self.polyak <= 1:
            raise ValueError("alpha >= 0 and polyak in (0, 1] required")
        if self.q1.layer_sizes != self.q1_targ.layer_sizes or self.q2.layer_sizes != self.q2_targ.layer_sizes:
            raise ValueError("target critics must match critic shapes")


def make_learner(state_dim: int, action_low, action_high, cfg: AlgoConfig,
                 rng_init: np.random.Generator, rng: np.random.Generator,
                 policy: nn.GaussianPolicy | None = None) -> SacLearner:
    action_low = np.atleast_1d(np.asarray(action_low, dtype=np.float64))
    hidden = [cfg.hidden_size] * cfg.hidden_layers
    if policy is None:
        policy = nn.make_policy(state_dim, action_low, action_high, hidden, rng_init)
    q_sizes = [state_dim + action_low.size, *hidden, 1]
    q1 = nn.init_mlp(q_sizes, rng_init)
    q2 = nn.init_mlp(q_sizes, rng_init)
    return SacLearner(policy, q1, q2, q1, q2, cfg.alpha, cfg.gamma, cfg.polyak, cfg.lr,
                      nn.adam_init(policy.net.arrays()), nn.adam_init(q1.arrays() + q2.arrays()), rng)


def q_value(q: nn.MlpParams, s, a):
    return nn.getitem(nn.mlp_forward(q, nn.concat([s, a], axis=-1)), (Ellipsis, 0))


def min_q(learner: SacLearner, s, a, target: bool = False):
    q1, q2 = (learner.q1_targ, learner.q2_targ) if target else (learner.q1, learner.q2)
    return nn.minimum(q_value(q1, s, a), q_value(q2, s, a))


def critic_targets(learner: SacLearner, batch: Batch) -> np.ndarray:
    """``y = r + gamma (1 - terminal) [min Q_targ(s', a') - alpha log pi(a'|s')]``."""
    a2, logp2 = nn.policy_sample(learner.policy, batch.s2, learner.rng)
    soft_v = min_q(learner, batch.s2, a2, target=True) - learner.alpha * logp2
    return batch.r + learner.gamma * (1.0 - batch.terminal) * soft_v


def critic_loss(arrays, learner: SacLearner, batch: Batch, y: np.ndarray):
    n1 = len(learner.q1.arrays())
    q1 = learner.q1.with_arrays(arrays[:n1])
    q2 = learner.q2.with_arrays(arrays[n1:])
    return (nn.mean(nn.square(q_value(q1, batch.s, batch.a) - y))
            + nn.mean(nn.square(q_value(q2, batch.s, batch.a) - y)))


def _polyak(targ: nn.MlpParams, cur: nn.MlpParams, rate: float) -> nn.MlpParams:
    return targ.with_arrays([(1.0 - rate) * t + rate * c for t, c in zip(targ.arrays(), cur.arrays())])


def critic_update(learner: SacLearner, batch: Batch) -> float:
    """One Adam step on both critics, then Polyak-average the targets."""
    if len(batch.r) == 0:
        raise ValueError("empty batch")
    y = critic_targets(learner, batch)
    arrays = learner.q1.arrays() + learner.q2.arrays()
    loss, grads = nn.value_and_grad(critic_loss, arrays, learner, batch, y)
    new, learner.critic_opt = nn.adam_step(arrays, grads, learner.critic_opt, learner.lr, name="critic")
    n1 = len(learner.q1.arrays())
    learner.q1 = learner.q1.with_arrays(new[:n1])
    learner.q2 = learner.q2.with_arrays(new[n1:])
    learner.q1_targ = _polyak(learner.q1_targ, learner.q1, learner.polyak)
    learner.q2_targ = _polyak(learner.q2_targ, learner.q2, learner.polyak)
    return loss


def sac_policy_loss(net_arrays, policy: nn.GaussianPolicy, learner: SacLearner, s, xi):
    """``mean[alpha log pi(a|s) - min Q(s, a)]`` with ``a`` reparameterised by ``xi``."""
    a, logp = nn.sample_with_noise(policy, s, xi, policy.net.with_arrays(net_arrays))
    return nn.mean(learner.alpha * logp - min_q(learner, s, a))


def policy_update_sac(learner: SacLearner, batch: Batch) -> float:
    if len(batch.r) == 0:
        raise ValueError("empty batch")
    pol = learner.policy
    xi = learner.rng.standard_normal((len(batch.r), pol.action_dim))
    arrays = pol.net.arrays()
    loss, grads = nn.value_and_grad(sac_policy_loss, arrays, pol, learner, batch.s, xi)
    new, learner.policy_opt = nn.adam_step(arrays, grads, learner.policy_opt, learner.lr, name="policy")
    learner.policy = pol.with_net(pol.net.with_arrays(new))
    learner.updates += 1
    return loss


def soft_value(learner: SacLearner, s, n_nodes: int = 10, policy: nn.GaussianPolicy | None = None):
    """``E_{a~pi}[min Q(s, a) - alpha log pi(a|s)]`` by Gauss-Hermite quadrature
    over the policy noise (deterministic)."""
    policy = policy or learner.policy
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    d = policy.action_dim
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    xi = np.stack([g.reshape(-1) for g in grids], axis=-1)
    w = np.ones(len(xi))
    for k in range(d):
        w = w * weights[np.searchsorted(nodes, xi[:, k])]
    n_s, n_q = len(s), len(xi)
    s_rep = np.repeat(s, n_q, axis=0)
    xi_rep = np.tile(xi, (n_s, 1))
    a, logp = nn.sample_with_noise(policy, s_rep, xi_rep)
    vals = (min_q(learner, s_rep, a) - learner.alpha * logp).reshape(n_s, n_q)
    return vals @ w


def evaluate(policy: nn.GaussianPolicy, spec: EnvSpec, episodes: int, seed: int):
    """Mean undiscounted return of the deterministic (mean-action) policy.

    Returns ``(mean, per_episode_returns)``.
    """
    returns = rollout_returns(spec, lambda s: nn.deterministic_action(policy, s), episodes, seed)
    return float(returns.mean()), returns


# ----------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    learner: object
    trace: TransferTrace
    buffer: ReplayBuffer


def rng_streams(seed: int) -> dict:
    names = ("init", "env", "act", "buffer", "learner", "aux")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def run_training(spec: EnvSpec, cfg: AlgoConfig, seed: int, policy_of: Callable,
                 update: Callable[[Batch], None], trace: TransferTrace, rngs: dict,
                 beta_since: Callable[[], float | None] = lambda: None,
                 stop_at: float | None = None) -> ReplayBuffer:
    """Generic off-policy loop: act, store, and every ``steps_per_iter`` steps run
    ``updates_per_iter`` updates on uniform mini-batches; evaluate every
    ``eval_interval`` steps (and at step 0). With ``stop_at`` the run ends at
    the first evaluation whose return reaches it."""
    buf = ReplayBuffer(cfg.buffer_size, spec.state_dim, spec.action_dim)
    t0 = time.perf_counter()

    def record(step):
        rho, _ = evaluate(policy_of(), spec, cfg.eval_episodes, cfg.eval_seed + seed)
        trace.append(step, rho, beta_since(), time.perf_counter() - t0)
        return stop_at is not None and rho >= stop_at

    if record(0):
        return buf
    s, t = env_reset(spec, rngs["env"]), 0
    for step in range(1, cfg.total_steps + 1):
        a, _ = nn.policy_sample(policy_of(), s, rngs["act"])
        tr = env_step(spec, s, a, rngs["env"], t)
        buf.add(tr)
        s, t = (env_reset(spec, rngs["env"]), 0) if tr.done else (tr.s_next, t + 1)
        if step % cfg.steps_per_iter == 0 and step >= cfg.update_after:
            for _ in range(cfg.updates_per_iter):
                update(buf.sample(cfg.batch_size, rngs["buffer"]))
        if step % cfg.eval_interval == 0 and record(step):
            break
    return buf


def train_sac(spec: EnvSpec, cfg: AlgoConfig, seed: int, init_policy: nn.GaussianPolicy | None = None,
              algo_id: str = "sac", stop_at: float | None = None) -> TrainResult:
    """Train SAC on ``spec``; ``init_policy`` turns this into source fine-tuning."""
    rngs = rng_streams(seed)
    bound = np.full(spec.action_dim, spec.action_bound)
    learner = make_learner(spec.state_dim, -bound, bound, cfg, rngs["init"], rngs["learner"], init_policy)
    trace = TransferTrace(algo_id, seed)

    def update(batch):
        critic_update(learner, batch)
        policy_update_sac(learner, batch)

    buf = run_training(spec, cfg, seed, lambda: learner.policy, update, trace, rngs, stop_at=stop_at)
    return TrainResult(learner, trace, buf)


def controller_threshold(spec: EnvSpec, kp: float = 4.0, kd: float = 2.0, margin: float = 0.25,
                         episodes: int = 100, seed: int = 0) -> tuple:
    """Return threshold derived from the PD controller: its mean return minus
    ``margin`` times its magnitude. Returns ``(threshold, controller_return)``."""
    ref = float(rollout_returns(spec, proportional_controller(spec, kp, kd), episodes, seed).mean())
    return ref - margin * abs(ref), ref


def learner_to_dict(learner: SacLearner) -> dict:
    return {
        "policy": nn.policy_to_dict(learner.policy),
        "critics": [nn.mlp_to_dict(q) for q in (learner.q1, learner.q2)],
        "target_critics": [nn.mlp_to_dict(q) for q in (learner.q1_targ, learner.q2_targ)],
        "learner": {"alpha": learner.alpha, "gamma": learner.gamma, "polyak": learner.polyak,
                    "lr": learner.lr, "updates": learner.updates},
    }
