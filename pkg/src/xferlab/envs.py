"""Point-mass control tasks with damping, mass, reward-scale and goal axes."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

REWARD_MODES = ("neg_distance", "forward_progress")
PERTURB_AXES = ("damping", "mass", "reward_scale", "goal")


@dataclass(frozen=True)
class EnvSpec:
    """2-D point mass. State is ``[x, y, vx, vy]``, action is a 2-D force."""
    kind: str = "point_mass"
    mass: float = 1.0
    damping: float = 1.0
    dt: float = 0.05
    goal: tuple = (1.0, 1.0)
    reward_mode: str = "neg_distance"
    reward_scale: float = 1.0
    horizon: int = 200
    action_bound: float = 1.0
    process_noise_std: float = 0.0
    goal_radius: float = 0.1
    start_low: tuple = (-0.25, -0.25)
    start_high: tuple = (0.25, 0.25)

    def __post_init__(self):
        for name in ("goal", "start_low", "start_high"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.kind != "point_mass":
            raise ValueError(f"unknown env kind {self.kind!r}")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.damping >= 0:
            raise ValueError("damping must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        if not self.action_bound > 0 or self.process_noise_std < 0 or self.goal_radius < 0:
            raise ValueError("action_bound > 0, process_noise_std >= 0, goal_radius >= 0 required")
        if len(self.goal) != 2 or len(self.start_low) != 2 or len(self.start_high) != 2:
            raise ValueError("goal and start box must be 2-D")
        if any(lo > hi for lo, hi in zip(self.start_low, self.start_high)):
            raise ValueError("start_low must not exceed start_high")
        if not np.isfinite(self.reward_scale):
            raise ValueError("reward_scale must be finite")

    state_dim = 4
    action_dim = 2

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in ("goal", "start_low", "start_high"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown EnvSpec fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    truncated: bool = False

    @property
    def terminal(self) -> bool:
        """True when the episode ended for a reason other than the time limit."""
        return self.done and not self.truncated


def perturb(spec: EnvSpec, axis: str, value) -> EnvSpec:
    """Copy of ``spec`` with one perturbation axis changed."""
    if axis not in PERTURB_AXES:
        raise ValueError(f"unknown perturbation axis {axis!r}")
    return dataclasses.replace(spec, **{axis: value})


def env_reset(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    pos = rng.uniform(spec.start_low, spec.start_high)
    return np.concatenate([pos, np.zeros(2)])


def dynamics(spec: EnvSpec, s: np.ndarray, a: np.ndarray, noise: np.ndarray | None = None):
    """Semi-implicit Euler step for a batch (or single) of states; returns
    ``(s_next, reward, reached_goal)``."""
    a = np.clip(a, -spec.action_bound, spec.action_bound)
    pos, vel = s[..., :2], s[..., 2:]
    vel2 = vel + spec.dt * (a - spec.damping * vel) / spec.mass
    if noise is not None:
        vel2 = vel2 + noise
    pos2 = pos + spec.dt * vel2
    s2 = np.concatenate([pos2, vel2], axis=-1)
    goal = np.asarray(spec.goal)
    dist = np.linalg.norm(pos2 - goal, axis=-1)
    if spec.reward_mode == "neg_distance":
        r = -spec.reward_scale * dist
        reached = dist <= spec.goal_radius
    else:
        r = spec.reward_scale * (pos2[..., 0] - pos[..., 0]) / spec.dt
        reached = np.zeros_like(dist, dtype=bool)
    return s2, r, reached


def env_step(spec: EnvSpec, s, a, rng: np.random.Generator, t: int = 0) -> Transition:
    """Advance one step from step index ``t`` within the episode."""
    s = np.asarray(s, dtype=np.float64)
    a = np.clip(np.asarray(a, dtype=np.float64), -spec.action_bound, spec.action_bound)
    noise = rng.normal(0.0, spec.process_noise_std, size=2) if spec.process_noise_std > 0 else None
    s2, r, reached = dynamics(spec, s, a, noise)
    if not np.all(np.isfinite(s2)):
        raise FloatingPointError(f"non-finite state {s2}")
    truncated = (t + 1 >= spec.horizon) and not reached
    return Transition(s, a, float(r), s2, bool(reached or truncated), bool(truncated))


def rollout_returns(spec: EnvSpec, act: Callable[[np.ndarray], np.ndarray], episodes: int,
                    seed: int) -> np.ndarray:
    """Undiscounted returns of ``episodes`` parallel episodes under ``act``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    s = np.stack([env_reset(spec, rng) for _ in range(episodes)])
    alive = np.ones(episodes, dtype=bool)
    total = np.zeros(episodes)
    for _ in range(spec.horizon):
        a = np.asarray(act(s), dtype=np.float64)
        noise = rng.normal(0.0, spec.process_noise_std, size=s.shape[:1] + (2,)) \
            if spec.process_noise_std > 0 else None
        s2, r, reached = dynamics(spec, s, a, noise)
        total += np.where(alive, r, 0.0)
        alive &= ~reached
        s = s2
        if not alive.any():
            break
    return total


def proportional_controller(spec: EnvSpec, kp: float = 4.0, kd: float = 2.0):
    """PD force toward the goal, saturated at the action bound."""
    goal = np.asarray(spec.goal)

    def act(s):
        s = np.asarray(s)
        force = kp * (goal - s[..., :2]) - kd * s[..., 2:]
        return np.clip(force, -spec.action_bound, spec.action_bound)

    return act
