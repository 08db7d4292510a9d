"""Relative transfer performance, learning-curve summaries and report bundles."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import svg
from .mdp import TabularMdp, forward_return
from .traces import TransferTrace, write_traces_csv

VALUE_TOL = 1e-9


class ScheduleMismatchError(ValueError):
    """Compared traces were not evaluated at the same environment steps."""


@dataclass(frozen=True)
class TauSeries:
    episodes: np.ndarray
    steps: np.ndarray
    tau: np.ndarray
    tau_std: np.ndarray
    per_seed: np.ndarray | None = None

    def __len__(self):
        return len(self.tau)

    def __add__(self, other: "TauSeries") -> "TauSeries":
        if not np.array_equal(self.steps, other.steps):
            raise ScheduleMismatchError("tau series are on different schedules")
        per = self.per_seed + other.per_seed if self.per_seed is not None and other.per_seed is not None \
            and self.per_seed.shape == other.per_seed.shape else None
        std = per.std(axis=0) if per is not None else np.full(len(self), np.nan)
        return TauSeries(self.episodes, self.steps, self.tau + other.tau, std, per)

    def __neg__(self) -> "TauSeries":
        return TauSeries(self.episodes, self.steps, -self.tau, self.tau_std,
                         None if self.per_seed is None else -self.per_seed)


def _as_list(traces) -> list:
    return [traces] if isinstance(traces, TransferTrace) else list(traces)


def common_schedule(*groups) -> np.ndarray:
    """Shared ``env_step`` schedule of all traces, or :class:`ScheduleMismatchError`."""
    traces = [t for g in groups for t in _as_list(g)]
    if not traces:
        raise ValueError("no traces given")
    steps = traces[0].steps
    for t in traces[1:]:
        if not np.array_equal(t.steps, steps):
            raise ScheduleMismatchError(f"{t.algo_id}/seed {t.seed} uses a different evaluation schedule "
                                        f"than {traces[0].algo_id}/seed {traces[0].seed}")
    return steps


def stack_rho(traces) -> np.ndarray:
    traces = _as_list(traces)
    common_schedule(traces)
    return np.stack([t.rho for t in traces])


def relative_transfer(algo, base) -> TauSeries:
    """``tau_t = rho^i_t - rho^b_t``.

    Either argument may be a list of per-seed traces; seed means are
    differenced. When both lists pair up seed by seed the per-seed
    differences are kept too.
    """
    algo, base = _as_list(algo), _as_list(base)
    steps = common_schedule(algo, base)
    ra, rb = stack_rho(algo), stack_rho(base)
    tau = ra.mean(axis=0) - rb.mean(axis=0)
    per = None
    if [t.seed for t in algo] == [t.seed for t in base]:
        per = ra - rb
    std = per.std(axis=0) if per is not None else np.sqrt(ra.var(axis=0) + rb.var(axis=0))
    return TauSeries(np.arange(len(steps)), steps, tau, std, per)


def auc(trace_or_steps, rho=None) -> float:
    """Trapezoid area under ``rho`` over ``env_step``."""
    if rho is None:
        steps, rho = trace_or_steps.steps, trace_or_steps.rho
    else:
        steps = trace_or_steps
    steps, rho = np.asarray(steps, dtype=np.float64), np.asarray(rho, dtype=np.float64)
    if len(steps) < 2:
        return 0.0
    return float(np.trapezoid(rho, steps))


def n_threshold(trace: TransferTrace, threshold: float):
    """First evaluated ``env_step`` whose return reaches ``threshold`` (None if never)."""
    hit = np.flatnonzero(trace.rho >= threshold)
    return int(trace.steps[hit[0]]) if hit.size else None


def at_least_fraction_of(value: float, reference: float, fraction: float) -> bool:
    """``value`` is no worse than ``reference`` minus ``(1 - fraction) * |reference|``.

    Equals ``value >= fraction * reference`` for positive references and keeps
    the same meaning (a relative shortfall) when returns are negative.
    """
    return value >= reference - (1.0 - fraction) * abs(reference)


# ----------------------------------------------------------------------------
# policy-improvement consistency on tabular problems


@dataclass(frozen=True)
class ImplicationCheck:
    holds: bool
    checked: int
    premises: int
    counterexamples: list

    def __bool__(self):
        return self.holds


def theorem1_check(algo: TransferTrace, base: TransferTrace, mdp: TabularMdp, algo_policies,
                   base_policies, horizon: int) -> ImplicationCheck:
    """Whenever ``tau_t = rho^i_t - rho^b_t >= 0`` the algorithm's greedy policy
    must be at least as good as the baseline's from the start state.

    ``rho`` must be exact expected returns. The values are recomputed by
    pushing the state distribution forward, independently of how ``rho`` was
    produced.
    """
    if not isinstance(mdp, TabularMdp):
        raise TypeError("theorem1_check needs a TabularMdp")
    common_schedule([algo, base])
    if len(algo_policies) != len(algo.points) or len(base_policies) != len(base.points):
        raise ValueError("need one policy per evaluation point")
    tau = algo.rho - base.rho
    bad, premises = [], 0
    for t, (pi_i, pi_b) in enumerate(zip(algo_policies, base_policies)):
        if tau[t] < 0:
            continue
        premises += 1
        v_i = forward_return(mdp, pi_i, horizon)
        v_b = forward_return(mdp, pi_b, horizon)
        if v_i < v_b - VALUE_TOL:
            bad.append((t, float(tau[t]), v_i, v_b))
    return ImplicationCheck(not bad, len(tau), premises, bad)


# ----------------------------------------------------------------------------
# report bundle


def band(traces) -> tuple:
    """``(steps, mean, std)`` of the return curves across seeds."""
    steps = common_schedule(traces)
    rho = stack_rho(traces)
    return steps, rho.mean(axis=0), rho.std(axis=0)


def write_tau_csv(path, tau: TauSeries) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("eval_episode", "tau_mean", "tau_std"))
        for e, m, s in zip(tau.episodes, tau.tau, tau.tau_std):
            w.writerow((int(e), repr(float(m)), repr(float(s))))


def group_traces(traces) -> dict:
    groups: dict = {}
    for t in traces:
        groups.setdefault(t.algo_id, []).append(t)
    for g in groups.values():
        g.sort(key=lambda t: t.seed)
    return groups


def summarize(traces, thresholds: dict | None = None) -> dict:
    out = {}
    for algo_id, group in group_traces(traces).items():
        finals = [t.rho[-1] for t in group]
        aucs = [auc(t) for t in group]
        entry = {"seeds": len(group), "final_return_mean": float(np.mean(finals)),
                 "final_return_std": float(np.std(finals)), "auc_mean": float(np.mean(aucs)),
                 "auc_std": float(np.std(aucs))}
        if thresholds and algo_id in thresholds:
            hits = [n_threshold(t, thresholds[algo_id]) for t in group]
            entry["threshold"] = thresholds[algo_id]
            entry["n_threshold"] = hits
        out[algo_id] = entry
    return out


def aggregate_report(traces: Sequence[TransferTrace], taus: dict, sims: dict, out_dir,
                     thresholds: dict | None = None, title: str = "") -> dict:
    """Write curves, tau and beta tables plus SVGs and ``summary.json`` to ``out_dir``.

    ``taus`` maps a label to a :class:`TauSeries`; ``sims`` maps the same
    labels to a similarity report (or anything with ``dyn_similarity`` and
    ``rew_similarity``) used to annotate the tau chart.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("aggregate_report needs at least one trace")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create report directory {out}: {e}") from e
    groups = group_traces(traces)
    write_traces_csv(out / "traces.csv", traces)
    series = []
    for algo_id, group in groups.items():
        steps, mean, std = band(group)
        series.append((algo_id, steps, mean, std))
    (out / "returns.svg").write_text(svg.line_chart(series, f"{title} returns".strip(), "env step", "return"))

    if taus:
        notes = []
        for label in taus:
            if label in sims:
                s = sims[label]
                notes.append(f"{label}: Xi_P={s.dyn_similarity:.3g} Xi_R={s.rew_similarity:.3g}")
        tau_series = []
        for label, tau in taus.items():
            write_tau_csv(out / f"tau_{label}.csv", tau)
            tau_series.append((label, tau.steps, tau.tau, tau.tau_std))
        (out / "tau.svg").write_text(svg.line_chart(tau_series, f"{title} relative transfer".strip(),
                                                    "env step", "tau", notes))

    beta_series = []
    with open(out / "beta.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("algo_id", "env_step", "beta_mean", "beta_std"))
        for algo_id, group in groups.items():
            b = np.stack([t.beta for t in group])
            if np.all(np.isnan(b)):
                continue
            steps = group[0].steps
            with warnings.catch_warnings():
                # columns with no beta yet (the step-0 evaluation) are all NaN
                warnings.simplefilter("ignore", RuntimeWarning)
                mean, std = np.nanmean(b, axis=0), np.nanstd(b, axis=0)
            for s, m, d in zip(steps, mean, std):
                w.writerow((algo_id, int(s), "" if np.isnan(m) else repr(float(m)),
                            "" if np.isnan(d) else repr(float(d))))
            beta_series.append((algo_id, steps, mean, std))
    if beta_series:
        (out / "beta.svg").write_text(svg.line_chart(beta_series, f"{title} beta".strip(), "env step", "beta"))

    summary = {"algorithms": summarize(traces, thresholds),
               "tau": {k: {"mean": float(np.mean(v.tau)), "final": float(v.tau[-1]),
                           "nonnegative_fraction": float(np.mean(v.tau >= 0))} for k, v in taus.items()},
               "similarity": {k: {"dyn_similarity": v.dyn_similarity, "rew_similarity": v.rew_similarity}
                              for k, v in sims.items()}}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary
