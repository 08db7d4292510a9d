"""Model-based task similarity.

Dynamics and reward models are fit on random-policy data from the source
task and then scored on random-policy data from a target task. The mean
prediction errors measure how far the target's dynamics and rewards are
from the source's.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .envs import EnvSpec, Transition, env_reset, env_step
from .mdp import TabularMdp
from .traces import config_hash


@dataclass(frozen=True)
class Dataset:
    """Transitions stored column-wise."""
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    env_fingerprint: str
    seed: int

    def __post_init__(self):
        n = len(self.r)
        if n == 0:
            raise ValueError("dataset is empty")
        if not (len(self.s) == len(self.a) == len(self.s2) == len(self.done) == n):
            raise ValueError("dataset columns differ in length")
        if self.s.shape != self.s2.shape:
            raise ValueError("state and next-state dimensions differ")

    def __len__(self):
        return len(self.r)

    @property
    def transitions(self) -> list:
        return [Transition(self.s[i], self.a[i], float(self.r[i]), self.s2[i], bool(self.done[i]))
                for i in range(len(self))]

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.s, self.a], axis=1)

    def split(self, frac: float = 0.8):
        """First ``frac`` of the rows for training, the rest held out."""
        k = max(1, int(round(frac * len(self)))) if len(self) > 1 else 1
        take = lambda sl: dataclasses.replace(self, s=self.s[sl], a=self.a[sl], r=self.r[sl],  # noqa: E731
                                              s2=self.s2[sl], done=self.done[sl])
        held = take(slice(k, None)) if k < len(self) else None
        return take(slice(0, k)), held


def _fingerprint(env) -> str:
    if isinstance(env, EnvSpec):
        return config_hash(env.to_dict())
    return config_hash({"P": np.round(env.P, 12).tolist(), "R": np.round(env.R, 12).tolist(),
                        "gamma": env.gamma})


def collect_random(env, m: int, seed: int, horizon: int = 100) -> Dataset:
    """``m`` transitions under uniformly random actions.

    For a :class:`TabularMdp` states and actions are one-hot vectors; episodes
    restart at the start state after a terminal state or ``horizon`` steps.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    if isinstance(env, EnvSpec):
        S, A, R, S2, D = [], [], [], [], []
        s, t = env_reset(env, rng), 0
        for _ in range(m):
            a = rng.uniform(-env.action_bound, env.action_bound, size=env.action_dim)
            tr = env_step(env, s, a, rng, t)
            S.append(tr.s), A.append(tr.a), R.append(tr.r), S2.append(tr.s_next), D.append(tr.done)
            s, t = (env_reset(env, rng), 0) if tr.done else (tr.s_next, t + 1)
        return Dataset(np.array(S), np.array(A), np.array(R), np.array(S2), np.array(D),
                       _fingerprint(env), seed)
    if not isinstance(env, TabularMdp):
        raise TypeError("env must be an EnvSpec or a TabularMdp")
    eye_s, eye_a = np.eye(env.n_states), np.eye(env.n_actions)
    cum_p = np.cumsum(env.P, axis=2)
    idx = np.empty((m, 3), dtype=np.int64)
    rew, done = np.empty(m), np.zeros(m, dtype=bool)
    s, t = env.start, 0
    for k in range(m):
        a = int(rng.integers(env.n_actions))
        s2 = min(int(np.searchsorted(cum_p[s, a], rng.random(), side="right")), env.n_states - 1)
        idx[k] = (s, a, s2)
        rew[k] = env.R[s, a]
        t += 1
        done[k] = bool(env.terminal[s2]) or t >= horizon
        s, t = (env.start, 0) if done[k] else (s2, t)
    return Dataset(eye_s[idx[:, 0]], eye_a[idx[:, 1]], rew, eye_s[idx[:, 2]], done, _fingerprint(env), seed)


# ----------------------------------------------------------------------------
# encoder-decoder regression models


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    epochs: int = 150
    batch_size: int = 128
    lr: float = 1e-3
    holdout: float = 0.2

    def __post_init__(self):
        if self.hidden < 1 or self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("hidden, batch_size >= 1, epochs >= 0, lr > 0 required")
        if not 0.0 <= self.holdout < 1.0:
            raise ValueError("holdout must lie in [0, 1)")


def encoder_decoder(n_in: int, n_out: int, latent: int, hidden: int, rng: np.random.Generator) -> nn.MlpParams:
    """Two hidden layers into a linear latent code, two hidden layers out."""
    net = nn.init_mlp([n_in, hidden, hidden, latent, hidden, hidden, n_out], rng)
    return dataclasses.replace(net, activations=("relu", "relu", "identity", "relu", "relu", "identity"))


def _scale(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=0)
    return np.where(sd > 1e-12, sd, 1.0)


@dataclass(frozen=True)
class RegressionModel:
    """Network on z-scored inputs. ``kind="dynamics"`` predicts the next state
    through a standardised state change; ``kind="reward"`` predicts a scalar."""
    kind: str
    net: nn.MlpParams
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    train_mse: float
    holdout_error: float | None = None

    def predict(self, s, a) -> np.ndarray:
        s, a = np.atleast_2d(s), np.atleast_2d(a)
        x = (np.concatenate([s, a], axis=1) - self.x_mean) / self.x_std
        y = nn.mlp_forward(self.net, x) * self.y_std + self.y_mean
        return s + y if self.kind == "dynamics" else y[:, 0]

    def errors(self, data: Dataset) -> np.ndarray:
        """Per-sample L2 prediction error in original units."""
        pred = self.predict(data.s, data.a)
        if self.kind == "dynamics":
            return np.linalg.norm(pred - data.s2, axis=1)
        return np.abs(pred - data.r)

    def scaled_errors(self, data: Dataset) -> np.ndarray:
        """Same errors measured in units of the training targets' spread."""
        pred = self.predict(data.s, data.a)
        if self.kind == "dynamics":
            return np.linalg.norm((pred - data.s2) / self.y_std, axis=1)
        return np.abs(pred - data.r) / self.y_std[0]


def regression_loss(arrays, net: nn.MlpParams, x: np.ndarray, y: np.ndarray):
    """Mean over samples of the squared L2 error."""
    diff = nn.mlp_forward(net.with_arrays(arrays), x) - y
    return nn.mean(nn.sum(nn.square(diff), axis=1))


def _fit(kind: str, data: Dataset, cfg: ModelConfig, seed: int) -> RegressionModel:
    train, held = data.split(1.0 - cfg.holdout) if cfg.holdout > 0 else (data, None)
    x = train.inputs
    y = train.s2 - train.s if kind == "dynamics" else train.r[:, None]
    x_mean, x_std = x.mean(axis=0), _scale(x)
    y_mean, y_std = y.mean(axis=0), _scale(y)
    xz, yz = (x - x_mean) / x_std, (y - y_mean) / y_std
    rng = np.random.default_rng(seed)
    latent = max(4, data.s.shape[1])
    net = encoder_decoder(x.shape[1], y.shape[1], latent, cfg.hidden, rng)
    arrays = net.arrays()
    opt = nn.adam_init(arrays)
    n = len(xz)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads = nn.value_and_grad(regression_loss, arrays, net, xz[idx], yz[idx])
            arrays, opt = nn.adam_step(arrays, grads, opt, cfg.lr, name=f"{kind} model")
    net = net.with_arrays(arrays)
    model = RegressionModel(kind, net, x_mean, x_std, y_mean, y_std, 0.0)
    resid = model.predict(train.s, train.a) - (train.s2 if kind == "dynamics" else train.r)
    mse = float(np.mean(resid ** 2))
    if not np.isfinite(mse):
        raise nn.NonFiniteError(f"{kind} model diverged")
    held_err = float(model.errors(held).mean()) if held is not None else None
    return dataclasses.replace(model, train_mse=mse, holdout_error=held_err)


def fit_dynamics(data: Dataset, cfg: ModelConfig = ModelConfig(), seed: int = 0) -> RegressionModel:
    return _fit("dynamics", data, cfg, seed)


def fit_reward(data: Dataset, cfg: ModelConfig = ModelConfig(), seed: int = 0) -> RegressionModel:
    return _fit("reward", data, cfg, seed)


# ----------------------------------------------------------------------------
# similarity


@dataclass
class SimilarityReport:
    xi_dyn: np.ndarray
    xi_rew: np.ndarray
    dyn_similarity: float
    rew_similarity: float
    m: int
    model_fit_residuals: dict
    noise_floor: dict = field(default_factory=dict)
    scaled: dict = field(default_factory=dict)
    mode: str = "source_models"

    def to_dict(self, per_sample: bool = True) -> dict:
        d = {"dyn_similarity": self.dyn_similarity, "rew_similarity": self.rew_similarity,
             "m": self.m, "mode": self.mode, "model_fit_residuals": self.model_fit_residuals,
             "noise_floor": self.noise_floor, "scaled": self.scaled}
        if per_sample:
            d["xi_dyn"] = self.xi_dyn.tolist()
            d["xi_rew"] = self.xi_rew.tolist()
        return d

    def to_json(self, per_sample: bool = True) -> str:
        return json.dumps(self.to_dict(per_sample), indent=1, sort_keys=True, allow_nan=False)


def similarity(source_models, target_data: Dataset, target_models=None,
               mode: str = "source_models") -> SimilarityReport:
    """Score target transitions with the source models.

    ``xi_dyn[k] = ||f_P(s, a) - s'||`` and ``xi_rew[k] = |f_R(s, a) - r|``; the
    similarities are their means. When ``target_models`` is given, their
    held-out errors are reported as the noise floor. ``mode="target_models"``
    scores the target data with the target models instead.
    """
    if mode not in ("source_models", "target_models"):
        raise ValueError(f"unknown mode {mode!r}")
    f_p, f_r = source_models
    n_in = f_p.x_mean.size
    if target_data.s.shape[1] + target_data.a.shape[1] != n_in:
        raise ValueError("target data dimensions do not match the source models")
    if mode == "target_models":
        if target_models is None:
            raise ValueError("target_models mode needs fitted target models")
        f_p, f_r = target_models
    xi_p, xi_r = f_p.errors(target_data), f_r.errors(target_data)
    resid = {"source_dyn_mse": source_models[0].train_mse, "source_rew_mse": source_models[1].train_mse}
    floor = {}
    if target_models is not None:
        resid.update(target_dyn_mse=target_models[0].train_mse, target_rew_mse=target_models[1].train_mse)
        floor = {"dyn": target_models[0].holdout_error, "rew": target_models[1].holdout_error}
    scaled = {"dyn_similarity": float(f_p.scaled_errors(target_data).mean()),
              "rew_similarity": float(f_r.scaled_errors(target_data).mean())}
    return SimilarityReport(xi_p, xi_r, float(xi_p.mean()), float(xi_r.mean()), len(target_data),
                            resid, floor, scaled, mode)


def fit_models(data: Dataset, cfg: ModelConfig, seed: int):
    return fit_dynamics(data, cfg, seed), fit_reward(data, cfg, seed + 1)


def similarity_ladder(source, targets: dict, m: int, seed: int, cfg: ModelConfig = ModelConfig(),
                      fit_targets: bool = True, mode: str = "source_models") -> dict:
    """Similarity of each named target to ``source`` from one seed.

    Every environment gets its own data stream derived from ``seed``; the
    source models are fit once and reused.
    """
    seeds = np.random.SeedSequence(seed).generate_state(len(targets) + 2)
    src_models = fit_models(collect_random(source, m, int(seeds[0])), cfg, int(seeds[1]))
    out = {}
    for k, (name, env) in enumerate(targets.items()):
        data = collect_random(env, m, int(seeds[k + 2]))
        tgt_models = fit_models(data, cfg, int(seeds[1])) if fit_targets or mode == "target_models" else None
        out[name] = similarity(src_models, data, tgt_models, mode)
    return out
