"""Four-room Q-value transfer experiment.

Q-learning on each target starts either from zero or from the source task's
optimal action values; the gap between the two learning curves is the
relative transfer performance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import ImplicationCheck, TauSeries, relative_transfer, theorem1_check
from .mdp import (GridSpec, TabularMdp, advantage_under_policy, four_room, greedy, load_layout, q_learning,
                  transfer_q, value_iteration)
from .traces import TransferTrace


@dataclass(frozen=True)
class ToyConfig:
    source: str = "source"
    targets: tuple = ("target1", "target2")
    seeds: tuple = tuple(range(20))
    lr: float = 0.9
    epsilon: float = 0.1
    horizon: int = 100
    eval_horizon: int = 50
    max_steps: int = 1250
    eval_every: int = 10
    window: int = 125
    step_reward: float = -0.01
    goal_reward: float = 1.0
    slip_prob: float = 0.0
    gamma: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds or not self.targets:
            raise ValueError("seeds and targets must be nonempty")
        if self.window < 1 or self.eval_every < 1:
            raise ValueError("window and eval_every must be >= 1")

    def grid_params(self) -> dict:
        return {"step_reward": self.step_reward, "goal_reward": self.goal_reward,
                "slip_prob": self.slip_prob, "gamma": self.gamma}


@dataclass
class ToyTarget:
    name: str
    grid: GridSpec
    mdp: TabularMdp
    transfer: list = field(default_factory=list)
    scratch: list = field(default_factory=list)
    transfer_policies: list = field(default_factory=list)
    scratch_policies: list = field(default_factory=list)
    tau: TauSeries | None = None
    checks: list = field(default_factory=list)
    exp_advantage: np.ndarray | None = None


@dataclass
class ToyResult:
    config: ToyConfig
    source_grid: GridSpec
    source_q: np.ndarray
    targets: dict

    def window_stats(self) -> dict:
        """Fractions over the first ``window`` evaluations used to judge the run."""
        w = self.config.window
        taus = {k: t.tau.tau[:w] for k, t in self.targets.items()}
        out = {f"{k}_nonnegative_fraction": float(np.mean(v >= 0)) for k, v in taus.items()}
        names = list(taus)
        if len(names) >= 2:
            out["first_dominates_fraction"] = float(np.mean(taus[names[0]] >= taus[names[1]]))
        out["implication_counterexamples"] = int(sum(len(c.counterexamples)
                                                     for t in self.targets.values() for c in t.checks))
        return out


def exp_advantage_grid(grid: GridSpec, mdp: TabularMdp, q_target: np.ndarray, policy) -> np.ndarray:
    """``exp(A(s, policy(s)))`` under the target's optimal values, laid out by
    cell; walls are NaN."""
    adv = np.exp(advantage_under_policy(q_target, policy))
    out = np.full((grid.height, grid.width), np.nan)
    for i, (r, c) in enumerate(mdp.cells):
        out[r, c] = adv[i]
    return out


def _trace(algo_id, seed, res) -> TransferTrace:
    tr = TransferTrace(algo_id, seed)
    for step, rho in zip(res.eval_steps, res.eval_returns):
        tr.append(int(step), float(rho))
    return tr


def run_toy(cfg: ToyConfig = ToyConfig()) -> ToyResult:
    params = cfg.grid_params()
    src_grid = load_layout(cfg.source, **params)
    src = four_room(src_grid)
    q_src = value_iteration(src)
    pi_src = greedy(q_src)
    targets = {}
    for name in cfg.targets:
        grid = load_layout(name, **params)
        mdp = four_room(grid)
        tgt = ToyTarget(name, grid, mdp)
        q_init = transfer_q(q_src, src, mdp)
        for seed in cfg.seeds:
            kw = dict(lr=cfg.lr, epsilon=cfg.epsilon, horizon=cfg.horizon, seed=seed,
                      max_steps=cfg.max_steps, eval_every=cfg.eval_every, eval_horizon=cfg.eval_horizon)
            res_t = q_learning(mdp, q_init, **kw)
            res_b = q_learning(mdp, np.zeros_like(mdp.R), **kw)
            tgt.transfer.append(_trace(f"transfer_{name}", seed, res_t))
            tgt.scratch.append(_trace(f"scratch_{name}", seed, res_b))
            tgt.transfer_policies.append(res_t.eval_policies)
            tgt.scratch_policies.append(res_b.eval_policies)
            tgt.checks.append(theorem1_check(tgt.transfer[-1], tgt.scratch[-1], mdp, res_t.eval_policies,
                                             res_b.eval_policies, cfg.eval_horizon))
        tgt.tau = relative_transfer(tgt.transfer, tgt.scratch)
        q_t = value_iteration(mdp)
        pi_src_on_t = greedy(transfer_q(q_src, src, mdp))
        tgt.exp_advantage = exp_advantage_grid(grid, mdp, q_t, pi_src_on_t)
        targets[name] = tgt
    return ToyResult(cfg, src_grid, q_src, targets)


def all_checks_hold(result: ToyResult) -> bool:
    return all(isinstance(c, ImplicationCheck) and c.holds for t in result.targets.values() for c in t.checks)
