"""Evaluation traces shared by the learners and the report code."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACE_COLUMNS = ("algo_id", "seed", "env_step", "eval_episode", "rho", "beta")
RUN_TRACE_COLUMNS = ("env_step", "eval_episode", "rho", "beta", "wall_time_s")


@dataclass(frozen=True)
class TracePoint:
    env_step: int
    eval_episode: int
    rho: float
    beta: float | None = None
    wall_time_s: float | None = None


@dataclass
class TransferTrace:
    algo_id: str
    seed: int
    config_hash: str = ""
    points: list = field(default_factory=list)

    def append(self, env_step: int, rho: float, beta: float | None = None,
               wall_time_s: float | None = None) -> None:
        if self.points and env_step <= self.points[-1].env_step:
            raise ValueError("env_step must be strictly increasing")
        if not np.isfinite(rho):
            raise ValueError("rho must be finite")
        self.points.append(TracePoint(int(env_step), len(self.points), float(rho), beta, wall_time_s))

    @property
    def steps(self) -> np.ndarray:
        return np.array([p.env_step for p in self.points], dtype=np.int64)

    @property
    def rho(self) -> np.ndarray:
        return np.array([p.rho for p in self.points])

    @property
    def beta(self) -> np.ndarray:
        return np.array([np.nan if p.beta is None else p.beta for p in self.points])


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if np.isnan(x) else repr(x)
    return str(x)


def write_traces_csv(path, traces) -> None:
    """Long-format trace table: one row per (trace, evaluation point)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for tr in traces:
            for p in tr.points:
                w.writerow([tr.algo_id, tr.seed, p.env_step, p.eval_episode, _fmt(p.rho), _fmt(p.beta)])


def read_traces_csv(path) -> list:
    traces: dict = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = (row["algo_id"], int(row["seed"]))
            tr = traces.setdefault(key, TransferTrace(row["algo_id"], int(row["seed"])))
            beta = float(row["beta"]) if row["beta"] else None
            tr.append(int(row["env_step"]), float(row["rho"]), beta)
    return list(traces.values())


def write_run_trace_csv(path, trace: TransferTrace, record_wall_time: bool = False) -> None:
    """Per-run table. ``wall_time_s`` stays empty unless asked for, so reruns
    produce identical bytes."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RUN_TRACE_COLUMNS)
        for p in trace.points:
            wall = _fmt(p.wall_time_s) if record_wall_time else ""
            w.writerow([p.env_step, p.eval_episode, _fmt(p.rho), _fmt(p.beta), wall])
