"""Seeded experiment pipelines shared by the command line and the test-suite."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .apt import apt_to_dict, train_apt
from .envs import EnvSpec
from .sac import AlgoConfig, evaluate, learner_to_dict, train_sac
from .traces import TransferTrace


def worker_count(n_jobs: int) -> int:
    """Process count for ``n_jobs`` independent runs, capped by ``XFERLAB_THREADS``."""
    cap = os.environ.get("XFERLAB_THREADS")
    n = min(n_jobs, os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as e:
            raise ValueError(f"XFERLAB_THREADS must be an integer, got {cap!r}") from e
    return max(1, n)


def pmap(fn, items: list) -> list:
    """Ordered map, in worker processes when more than one is allowed."""
    n = worker_count(len(items))
    if n == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def train_source(spec: EnvSpec, cfg: AlgoConfig, steps: int, seed: int) -> nn.GaussianPolicy:
    return train_sac(spec, cfg.replace(total_steps=steps), seed, algo_id="source").learner.policy


def zero_shot_trace(policy: nn.GaussianPolicy, spec: EnvSpec, cfg: AlgoConfig, seed: int,
                    steps) -> TransferTrace:
    """The untouched source policy evaluated on the target, repeated on a schedule."""
    rho, _ = evaluate(policy, spec, cfg.eval_episodes, cfg.eval_seed + seed)
    tr = TransferTrace("zero_shot", seed)
    for s in steps:
        tr.append(int(s), rho)
    return tr


@dataclass
class SeedRuns:
    seed: int
    traces: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)


def run_transfer_seed(args) -> SeedRuns:
    """All algorithms for one (target, seed): APT, the requested baselines and
    any fixed-beta variants. ``args`` is a tuple so it can cross process
    boundaries."""
    source_dict, spec_dict, cfg_dict, seed, baselines, fixed_betas = args
    source = nn.policy_from_dict(source_dict)
    spec = EnvSpec.from_dict(spec_dict)
    cfg = AlgoConfig(**cfg_dict)
    out = SeedRuns(seed)
    res = train_apt(source, spec, cfg, seed, algo_id="apt")
    out.traces["apt"], out.checkpoints["apt"] = res.trace, apt_to_dict(res.learner)
    for b in fixed_betas:
        name = f"apt_beta_{b:g}"
        res = train_apt(source, spec, cfg.replace(beta_mode="fixed", fixed_beta=b), seed, algo_id=name)
        out.traces[name], out.checkpoints[name] = res.trace, apt_to_dict(res.learner)
    if "scratch" in baselines:
        res = train_sac(spec, cfg, seed, algo_id="scratch")
        out.traces["scratch"], out.checkpoints["scratch"] = res.trace, learner_to_dict(res.learner)
    if "fine_tune" in baselines:
        res = train_sac(spec, cfg, seed, init_policy=source, algo_id="fine_tune")
        out.traces["fine_tune"], out.checkpoints["fine_tune"] = res.trace, learner_to_dict(res.learner)
    if "zero_shot" in baselines:
        out.traces["zero_shot"] = zero_shot_trace(source, spec, cfg, seed, out.traces["apt"].steps)
    return out


def run_transfer(source: nn.GaussianPolicy, spec: EnvSpec, cfg: AlgoConfig, seeds,
                 baselines=("scratch", "fine_tune", "zero_shot"), fixed_betas=()) -> list:
    args = [(nn.policy_to_dict(source), spec.to_dict(), cfg.to_dict(), s, tuple(baselines), tuple(fixed_betas))
            for s in seeds]
    return pmap(run_transfer_seed, args)


def run_train_seed(args):
    spec_dict, cfg_dict, seed, stop_at = args
    res = train_sac(EnvSpec.from_dict(spec_dict), AlgoConfig(**cfg_dict), seed, algo_id="sac", stop_at=stop_at)
    return res.trace, learner_to_dict(res.learner)


def run_train(spec: EnvSpec, cfg: AlgoConfig, seeds, stop_at: float | None = None) -> list:
    return pmap(run_train_seed, [(spec.to_dict(), cfg.to_dict(), s, stop_at) for s in seeds])


def paired_fraction(a: list, b: list, better) -> float:
    """Fraction of seed pairs for which ``better(x, y)`` holds."""
    if len(a) != len(b) or not a:
        raise ValueError("need equally many, nonzero, paired values")
    return float(np.mean([bool(better(x, y)) for x, y in zip(a, b)]))
