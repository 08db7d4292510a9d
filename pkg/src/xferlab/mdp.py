"""Exact tabular machinery: finite MDPs, value iteration, policy evaluation,
Q-learning, four-room gridworlds and the action-value gap bound."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIONS = ("up", "down", "left", "right")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
LAYOUT_CHARS = frozenset("#.SGD")
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with ``P[s, a, s']``, expected reward ``R[s, a]`` and discount."""
    P: np.ndarray
    R: np.ndarray
    gamma: float
    terminal: np.ndarray | None = None
    start: int = 0
    cells: tuple | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise ValueError(f"inconsistent shapes P{P.shape} R{R.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("every P[s, a, :] must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")
        term = np.zeros(P.shape[0], dtype=bool) if self.terminal is None else np.asarray(self.terminal, dtype=bool)
        if term.shape != (P.shape[0],):
            raise ValueError("terminal needs one flag per state")
        for s in np.flatnonzero(term):
            if not np.all(P[s, :, s] == 1.0) or np.any(R[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
        if not 0 <= self.start < P.shape[0]:
            raise ValueError("start state out of range")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "terminal", term)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


def bellman_optimality(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    return mdp.R + mdp.gamma * mdp.P @ q.max(axis=1)


def value_iteration(mdp: TabularMdp, tol: float = 1e-8) -> np.ndarray:
    """Optimal action values with Bellman residual ``||Q - TQ||_inf <= tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros_like(mdp.R)
    while True:
        tq = bellman_optimality(mdp, q)
        if np.max(np.abs(tq - q)) <= tol:
            # residual of tq is at most gamma times that of q
            return tq
        q = tq


def greedy(q: np.ndarray) -> np.ndarray:
    """Greedy policy; ties go to the lowest action index."""
    return np.argmax(q, axis=1)


def _check_policy(mdp: TabularMdp, policy) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.shape != (mdp.n_states,):
        raise ValueError("policy must give one action per state")
    if np.any(policy < 0) or np.any(policy >= mdp.n_actions) or not np.issubdtype(policy.dtype, np.integer):
        raise ValueError("policy contains out-of-range actions")
    return policy


def policy_q_values(mdp: TabularMdp, policy, tol: float = 1e-10) -> np.ndarray:
    """Action values of a deterministic policy, by a direct linear solve.

    ``tol`` only bounds the accepted residual of the solve.
    """
    policy = _check_policy(mdp, policy)
    idx = np.arange(mdp.n_states)
    p_pi = mdp.P[idx, policy]
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, mdp.R[idx, policy])
    q = mdp.R + mdp.gamma * mdp.P @ v
    if np.max(np.abs(q - (mdp.R + mdp.gamma * mdp.P @ q[idx, policy]))) > max(tol, 1e-9):
        raise ArithmeticError("policy evaluation solve is ill-conditioned")
    return q


def finite_horizon_return(mdp: TabularMdp, policy, horizon: int) -> np.ndarray:
    """Expected undiscounted sum of ``horizon`` rewards from every state."""
    policy = _check_policy(mdp, policy)
    idx = np.arange(mdp.n_states)
    p_pi, r_pi = mdp.P[idx, policy], mdp.R[idx, policy]
    v = np.zeros(mdp.n_states)
    for _ in range(horizon):
        v = r_pi + p_pi @ v
    return v


def forward_return(mdp: TabularMdp, policy, horizon: int, start: int | None = None) -> float:
    """Same quantity as :func:`finite_horizon_return` at one state, computed by
    pushing the state distribution forward instead of backing values up."""
    policy = _check_policy(mdp, policy)
    idx = np.arange(mdp.n_states)
    p_pi, r_pi = mdp.P[idx, policy], mdp.R[idx, policy]
    d = np.zeros(mdp.n_states)
    d[mdp.start if start is None else start] = 1.0
    total = 0.0
    for _ in range(horizon):
        total += float(d @ r_pi)
        d = d @ p_pi
    return total


# ----------------------------------------------------------------------------
# Q-learning


@dataclass
class QLearningResult:
    q: np.ndarray
    eval_steps: np.ndarray
    eval_returns: np.ndarray
    eval_policies: np.ndarray
    episodes: int


def q_learning(mdp: TabularMdp, q_init: np.ndarray, *, lr: float, epsilon: float,
               horizon: int, seed: int, max_steps: int | None = None,
               episodes: int | None = None, eval_every: int = 10,
               eval_horizon: int | None = None) -> QLearningResult:
    """Tabular epsilon-greedy Q-learning with periodic greedy evaluation.

    Training episodes start at ``mdp.start`` and last until a terminal state or
    ``horizon`` steps. Every ``eval_every`` environment steps (and once before
    training) the greedy policy's expected ``eval_horizon``-step return from
    the start state is recorded. Behaviour ties are broken at random; the
    evaluated greedy policy breaks ties by lowest index.
    """
    if not 0.0 < lr <= 1.0:
        raise ValueError("lr must lie in (0, 1]")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if max_steps is None and episodes is None:
        raise ValueError("give max_steps and/or episodes")
    q = np.array(q_init, dtype=np.float64)
    if q.shape != mdp.R.shape or not np.all(np.isfinite(q)):
        raise ValueError("q_init must be a finite array shaped like R")
    eval_horizon = horizon if eval_horizon is None else eval_horizon
    rng = np.random.default_rng(seed)
    cum_p = np.cumsum(mdp.P, axis=2)
    n_a = mdp.n_actions

    steps_log, returns_log, policies_log = [], [], []

    def record(step):
        pi = greedy(q)
        steps_log.append(step)
        returns_log.append(finite_horizon_return(mdp, pi, eval_horizon)[mdp.start])
        policies_log.append(pi)

    record(0)
    step, n_episodes = 0, 0
    while (max_steps is None or step < max_steps) and (episodes is None or n_episodes < episodes):
        s = mdp.start
        for _ in range(horizon):
            if rng.random() < epsilon:
                a = int(rng.integers(n_a))
            else:
                best = np.flatnonzero(q[s] == q[s].max())
                a = int(best[0]) if best.size == 1 else int(rng.choice(best))
            s2 = int(np.searchsorted(cum_p[s, a], rng.random(), side="right"))
            s2 = min(s2, mdp.n_states - 1)
            r = mdp.R[s, a]
            target = r if mdp.terminal[s2] else r + mdp.gamma * q[s2].max()
            q[s, a] += lr * (target - q[s, a])
            step += 1
            if step % eval_every == 0:
                record(step)
            s = s2
            if mdp.terminal[s] or (max_steps is not None and step >= max_steps):
                break
        n_episodes += 1
    return QLearningResult(q, np.array(steps_log), np.array(returns_log),
                           np.array(policies_log), n_episodes)


# ----------------------------------------------------------------------------
# four-room gridworlds


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset
    doorways: frozenset
    start: tuple
    goal: tuple
    step_reward: float = -0.01
    goal_reward: float = 1.0
    slip_prob: float = 0.0
    gamma: float = 0.95

    def __post_init__(self):
        if self.start == self.goal:
            raise ValueError("start and goal coincide")
        if self.start in self.walls or self.goal in self.walls:
            raise ValueError("start/goal placed on a wall")
        if not 0.0 <= self.slip_prob <= 1.0:
            raise ValueError("slip_prob must lie in [0, 1]")
        for r, c in (self.start, self.goal):
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError("start/goal outside the grid")

    def floor_cells(self) -> list:
        return [(r, c) for r in range(self.height) for c in range(self.width) if (r, c) not in self.walls]


def parse_layout(text: str, **params) -> GridSpec:
    """Parse a layout: ``#`` wall, ``.`` floor, ``S`` start, ``G`` goal, ``D`` doorway.

    Rows must be equal length; exactly one ``S`` and one ``G``. A single
    trailing newline is allowed.
    """
    rows = text[:-1].split("\n") if text.endswith("\n") else text.split("\n")
    if not rows or not rows[0]:
        raise ValueError("empty layout")
    width = len(rows[0])
    walls, doors, starts, goals = set(), set(), [], []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"row {r} has length {len(row)}, expected {width}")
        for c, ch in enumerate(row):
            if ch not in LAYOUT_CHARS:
                raise ValueError(f"unexpected character {ch!r} at row {r}, column {c}")
            if ch == "#":
                walls.add((r, c))
            elif ch == "D":
                doors.add((r, c))
            elif ch == "S":
                starts.append((r, c))
            elif ch == "G":
                goals.append((r, c))
    if len(starts) != 1 or len(goals) != 1:
        raise ValueError("layout needs exactly one S and one G")
    return GridSpec(width, len(rows), frozenset(walls), frozenset(doors), starts[0], goals[0], **params)


def render_layout(spec: GridSpec) -> str:
    out = []
    for r in range(spec.height):
        row = []
        for c in range(spec.width):
            cell = (r, c)
            row.append("#" if cell in spec.walls else "S" if cell == spec.start else
                       "G" if cell == spec.goal else "D" if cell in spec.doorways else ".")
        out.append("".join(row))
    return "\n".join(out) + "\n"


def load_layout(name_or_path, **params) -> GridSpec:
    """Load a shipped layout (``source``, ``target1``, ``target2``) or a file path."""
    path = Path(name_or_path)
    if path.suffix == ".txt" or path.exists():
        return parse_layout(path.read_text(), **params)
    text = resources.files("xferlab.layouts").joinpath(f"{name_or_path}.txt").read_text()
    return parse_layout(text, **params)


def _move(spec: GridSpec, cell, a):
    r, c = cell[0] + MOVES[a][0], cell[1] + MOVES[a][1]
    if not (0 <= r < spec.height and 0 <= c < spec.width) or (r, c) in spec.walls:
        return cell
    return (r, c)


def _reaches_goal(spec: GridSpec) -> set:
    """Cells from which the goal is reachable (moves are reversible)."""
    seen, queue = {spec.goal}, deque([spec.goal])
    while queue:
        cell = queue.popleft()
        for a in range(4):
            nxt = _move(spec, cell, a)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def four_room(spec: GridSpec) -> TabularMdp:
    """Gridworld MDP over the floor cells; bumping a wall leaves the agent in place.

    With probability ``slip_prob`` the move direction is drawn uniformly from
    all four actions. Entering the goal pays ``goal_reward`` and ends the
    episode; every other step pays ``step_reward``.
    """
    cells = spec.floor_cells()
    connected = _reaches_goal(spec)
    if spec.start not in connected:
        raise ValueError("goal is unreachable from the start cell")
    stranded = [c for c in cells if c not in connected]
    if stranded:
        raise ValueError(f"cells {stranded[:3]} cannot reach the goal")
    index = {cell: i for i, cell in enumerate(cells)}
    n = len(cells)
    P = np.zeros((n, 4, n))
    for cell, s in index.items():
        for a in range(4):
            if cell == spec.goal:
                P[s, a, s] = 1.0
                continue
            P[s, a, index[_move(spec, cell, a)]] += 1.0 - spec.slip_prob
            for b in range(4):
                P[s, a, index[_move(spec, cell, b)]] += spec.slip_prob / 4
    g = index[spec.goal]
    R = spec.step_reward + (spec.goal_reward - spec.step_reward) * P[:, :, g]
    terminal = np.zeros(n, dtype=bool)
    terminal[g] = True
    R[g] = 0.0
    return TabularMdp(P, R, spec.gamma, terminal, index[spec.start], tuple(cells))


def transfer_q(q: np.ndarray, src: TabularMdp, dst: TabularMdp) -> np.ndarray:
    """Map a Q-table between grid MDPs by cell; cells missing in ``src`` get 0."""
    out = np.zeros_like(dst.R)
    where = {cell: i for i, cell in enumerate(src.cells)}
    for j, cell in enumerate(dst.cells):
        if cell in where:
            out[j] = q[where[cell]]
    return out


# ----------------------------------------------------------------------------
# total variation distance and the action-value gap bound


def tv_distance(a: TabularMdp, b: TabularMdp) -> float:
    """``max_{s,a} 0.5 * sum_{s'} |P_a - P_b|``."""
    if a.P.shape != b.P.shape:
        raise ValueError(f"kernel shapes differ: {a.P.shape} vs {b.P.shape}")
    return kernel_tv(a.P, b.P)


def kernel_tv(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.max(0.5 * np.abs(p - q).sum(axis=-1)))


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    delta_r: float
    delta_tv: float
    holds: bool


def bound_rhs(delta_r: float, delta_tv: float, rmax_s: float, rmax_t: float, gamma: float) -> float:
    return 2 * delta_r / (1 - gamma) + 2 * gamma * delta_tv * (rmax_s + rmax_t) / (1 - gamma) ** 2


def action_value_bound(source: TabularMdp, target: TabularMdp, tol: float = 1e-8) -> BoundReport:
    """Compare ``||Q_T^{pi*_T} - Q_T^{pi*_S}||_inf`` with its reward/dynamics-gap bound.

    Both policies are greedy in value-iteration solutions and both sides of the
    gap are evaluated exactly in the target, so identical MDPs give 0.
    """
    if source.P.shape != target.P.shape:
        raise ValueError("source and target must share states and actions")
    if source.gamma != target.gamma:
        raise ValueError("source and target must share gamma")
    pi_s = greedy(value_iteration(source, tol))
    pi_t = greedy(value_iteration(target, tol))
    lhs = float(np.max(np.abs(policy_q_values(target, pi_t) - policy_q_values(target, pi_s))))
    delta_r = float(np.max(np.abs(source.R - target.R)))
    delta_tv = tv_distance(source, target)
    rhs = bound_rhs(delta_r, delta_tv, float(np.max(np.abs(source.R))),
                    float(np.max(np.abs(target.R))), source.gamma)
    return BoundReport(lhs, rhs, delta_r, delta_tv, lhs <= rhs + BOUND_SLACK)


def random_mdp(n_states: int, n_actions: int, gamma: float, rng: np.random.Generator,
               concentration: float = 1.0) -> TabularMdp:
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(P, R, gamma)


def perturbed_mdp(mdp: TabularMdp, rng: np.random.Generator, dyn_eps: float, rew_eps: float) -> TabularMdp:
    """Mix the kernel with a random one by ``dyn_eps`` and jitter rewards by ``rew_eps``."""
    other = rng.dirichlet(np.ones(mdp.n_states), size=mdp.R.shape)
    P = (1 - dyn_eps) * mdp.P + dyn_eps * other
    P /= P.sum(axis=2, keepdims=True)
    R = mdp.R + rew_eps * rng.uniform(-1.0, 1.0, size=mdp.R.shape)
    return TabularMdp(P, R, mdp.gamma)


@dataclass
class SweepResult:
    pairs: int
    violations: int
    max_ratio: float
    reports: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {"pairs": self.pairs, "violations": self.violations, "max_lhs_over_rhs": self.max_ratio}


def bound_sweep(n_pairs: int = 1000, seed: int = 0, max_states: int = 6, max_actions: int = 3,
                gammas: Sequence[float] = (0.5, 0.9, 0.95), tol: float = 1e-8) -> SweepResult:
    """Check the bound on random fixed-domain MDP pairs.

    Pairs cycle through four kinds: independent MDPs, small joint
    perturbations, reward-only and dynamics-only perturbations.
    """
    rng = np.random.default_rng(seed)
    violations, worst, reports = 0, 0.0, []
    for k in range(n_pairs):
        n_s = int(rng.integers(1, max_states + 1))
        n_a = int(rng.integers(1, max_actions + 1))
        gamma = float(rng.choice(gammas))
        src = random_mdp(n_s, n_a, gamma, rng, concentration=float(rng.choice([0.2, 1.0, 5.0])))
        kind = k % 4
        if kind == 0:
            dst = random_mdp(n_s, n_a, gamma, rng)
        elif kind == 1:
            dst = perturbed_mdp(src, rng, float(rng.uniform(0, 0.3)), float(rng.uniform(0, 0.3)))
        elif kind == 2:
            dst = perturbed_mdp(src, rng, 0.0, float(rng.uniform(0, 0.5)))
        else:
            dst = perturbed_mdp(src, rng, float(rng.uniform(0, 0.5)), 0.0)
        rep = action_value_bound(src, dst, tol)
        reports.append(rep)
        violations += not rep.holds
        if rep.rhs > 0:
            worst = max(worst, rep.lhs / rep.rhs)
    return SweepResult(n_pairs, violations, worst, reports)


def advantage_under_policy(q: np.ndarray, policy) -> np.ndarray:
    """``A(s, policy(s)) = Q(s, policy(s)) - max_a Q(s, a)`` per state."""
    policy = np.asarray(policy)
    return q[np.arange(q.shape[0]), policy] - q.max(axis=1)
