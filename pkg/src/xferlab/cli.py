"""``xferlab`` command line.

    xferlab <toy|train|transfer|similarity|bound|report> --config PATH [--seed-override N] [--out DIR]

Artifacts go to ``DIR/<run_id>`` where ``run_id`` hashes the config and seeds.
On failure one line ``error: CODE: message`` is printed to stderr and the
process exits with the code's number.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import nn, svg
from .evaluation import aggregate_report, auc, relative_transfer, write_tau_csv
from .experiments import pmap, run_train, run_transfer, train_source
from .mdp import bound_sweep, render_layout
from .sac import controller_threshold
from .tasksim import similarity_ladder
from .toy import run_toy
from .traces import read_traces_csv, write_run_trace_csv, write_traces_csv

EXIT_CODES = {
    "OK": 0,
    "INTERNAL_ERROR": 1,
    "USAGE": 2,
    "CONFIG_NOT_FOUND": 3,
    "CONFIG_INVALID_JSON": 4,
    "CONFIG_UNKNOWN_KEY": 5,
    "CONFIG_MISSING_KEY": 6,
    "CONFIG_INVALID_VALUE": 7,
    "FILE_NOT_FOUND": 8,
    "NUMERICAL_ERROR": 9,
    "IO_ERROR": 10,
}


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")


# ----------------------------------------------------------------------------
# subcommands; each returns a JSON-serialisable summary


def cmd_toy(cfg: dict, out: Path) -> dict:
    res = run_toy(cfg["toy"])
    curves, taus = [], {}
    for name, tgt in res.targets.items():
        write_traces_csv(out / f"traces_{name}.csv", tgt.transfer + tgt.scratch)
        write_tau_csv(out / f"tau_{name}.csv", tgt.tau)
        taus[name] = tgt.tau
        for label, group in ((f"transfer {name}", tgt.transfer), (f"scratch {name}", tgt.scratch)):
            rho = np.stack([t.rho for t in group])
            curves.append((label, np.arange(rho.shape[1]), rho.mean(axis=0), rho.std(axis=0)))
        (out / f"layout_{name}.txt").write_text(render_layout(tgt.grid))
        (out / f"exp_advantage_{name}.svg").write_text(
            svg.heatmap(tgt.exp_advantage, f"exp(A) of the source greedy action on {name}", 0.0, 1.0))
    (out / "returns.svg").write_text(svg.line_chart(curves, "four-room returns", "evaluation episode", "return"))
    (out / "tau.svg").write_text(svg.line_chart(
        [(k, np.arange(len(v)), v.tau, v.tau_std) for k, v in taus.items()],
        "four-room relative transfer", "evaluation episode", "tau"))
    stats = res.window_stats()
    names = list(taus)
    summary = {"window": res.config.window, **stats,
               "tau_mean": {k: float(np.mean(v.tau[:res.config.window])) for k, v in taus.items()}}
    if len(names) >= 2:
        summary["first_target_higher"] = bool(summary["tau_mean"][names[0]] >= summary["tau_mean"][names[1]])
    return summary


def cmd_train(cfg: dict, out: Path) -> dict:
    th = cfg["threshold"]
    oracle, ref = controller_threshold(cfg["env"], th["controller_kp"], th["controller_kd"], th["margin"],
                                       th["episodes"], th["seed"])
    threshold = th["value"] if th["value"] is not None else oracle
    stop_at = threshold if cfg["stop_at_threshold"] else None
    results = run_train(cfg["env"], cfg["algo"], cfg["seeds"], stop_at)
    traces = [tr for tr, _ in results]
    _write_runs(out, traces, [ck for _, ck in results], cfg["record_wall_time"])
    write_traces_csv(out / "traces.csv", traces)
    reached = [bool(np.any(t.rho >= threshold)) for t in traces]
    summary = aggregate_report(traces, {}, {}, out / "report", {"sac": threshold}, "scratch SAC")
    return {"threshold": threshold, "controller_return": ref, "threshold_from_controller": oracle,
            "reached": reached, "reached_fraction": float(np.mean(reached)),
            "algorithms": summary["algorithms"]}


def _write_runs(out: Path, traces, checkpoints, record_wall_time: bool) -> None:
    (out / "runs").mkdir(exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    for tr, ck in zip(traces, checkpoints):
        write_run_trace_csv(out / "runs" / f"{tr.algo_id}_seed{tr.seed}.csv", tr, record_wall_time)
        if ck is not None:
            nn.save_checkpoint(out / "checkpoints" / f"{tr.algo_id}_seed{tr.seed}.json", ck)


def cmd_transfer(cfg: dict, out: Path) -> dict:
    src_cfg, algo = cfg["source"], cfg["algo"]
    if src_cfg["checkpoint"] is not None:
        doc = nn.load_checkpoint(src_cfg["checkpoint"])
        source = nn.policy_from_dict(doc.get("policy", doc))
    else:
        source = train_source(src_cfg["env"], algo, src_cfg["train_steps"], src_cfg["seed"])
    nn.save_checkpoint(out / "source_policy.json", {"policy": nn.policy_to_dict(source)})
    summary = {}
    for name, spec in cfg["targets"].items():
        tdir = out / name
        tdir.mkdir(exist_ok=True)
        per_seed = run_transfer(source, spec, algo, cfg["seeds"], cfg["baselines"], cfg["beta_ablation"])
        traces, cks = [], []
        for sr in per_seed:
            for algo_id, tr in sr.traces.items():
                traces.append(tr)
                cks.append(sr.checkpoints.get(algo_id))
        _write_runs(tdir, traces, cks, cfg["record_wall_time"])
        groups = {}
        for tr in traces:
            groups.setdefault(tr.algo_id, []).append(tr)
        taus = {}
        if "scratch" in groups:
            for algo_id, group in groups.items():
                if algo_id != "scratch":
                    taus[f"{algo_id}_vs_scratch"] = relative_transfer(group, groups["scratch"])
        rep = aggregate_report(traces, taus, {}, tdir, title=name)
        summary[name] = {"algorithms": rep["algorithms"], "tau": rep["tau"]}
        if "scratch" in groups:
            summary[name]["apt_auc_at_least_scratch"] = [
                bool(auc(a) >= auc(b)) for a, b in zip(groups["apt"], groups["scratch"])]
    return summary


def cmd_similarity(cfg: dict, out: Path) -> dict:
    names = list(cfg["targets"])
    args = [(cfg["source"], cfg["targets"], cfg["m"], s, cfg["model"], cfg["fit_targets"], cfg["mode"])
            for s in cfg["seeds"]]
    reports = pmap(_similarity_seed, args)
    rows = []
    for seed, rep in zip(cfg["seeds"], reports):
        (out / f"similarity_seed{seed}.json").write_text(
            json.dumps({k: v.to_dict(per_sample=False) for k, v in rep.items()}, indent=1, sort_keys=True) + "\n")
        for name in names:
            r = rep[name]
            rows.append((seed, name, r.dyn_similarity, r.rew_similarity, r.noise_floor.get("dyn"),
                         r.noise_floor.get("rew")))
    with open(out / "ladder.csv", "w") as f:
        f.write("seed,target,xi_dyn,xi_rew,floor_dyn,floor_rew\n")
        for row in rows:
            f.write(",".join("" if v is None else (repr(float(v)) if isinstance(v, float) else str(v))
                             for v in row) + "\n")
    dyn = np.array([[rep[n].dyn_similarity for n in names] for rep in reports])
    rew = np.array([[rep[n].rew_similarity for n in names] for rep in reports])
    (out / "dyn_similarity.svg").write_text(svg.bar_chart(names, dyn.mean(axis=0), "dynamics similarity",
                                                          "Xi_P", dyn.std(axis=0)))
    (out / "rew_similarity.svg").write_text(svg.bar_chart(names, rew.mean(axis=0), "reward similarity",
                                                          "Xi_R", rew.std(axis=0)))
    increasing = [bool(np.all(np.diff(d) > 0)) for d in dyn]
    return {"targets": names, "dyn_similarity_mean": dyn.mean(axis=0).tolist(),
            "rew_similarity_mean": rew.mean(axis=0).tolist(), "dyn_strictly_increasing_per_seed": increasing}


def _similarity_seed(args):
    source, targets, m, seed, model, fit_targets, mode = args
    return similarity_ladder(source, targets, m, seed, model, fit_targets, mode)


def cmd_bound(cfg: dict, out: Path) -> dict:
    res = bound_sweep(cfg["pairs"], cfg["seeds"][0], cfg["max_states"], cfg["max_actions"], cfg["gammas"], cfg["tol"])
    with open(out / "bound.csv", "w") as f:
        f.write("pair,lhs,rhs,delta_r,delta_tv,holds\n")
        for k, r in enumerate(res.reports):
            f.write(f"{k},{r.lhs!r},{r.rhs!r},{r.delta_r!r},{r.delta_tv!r},{int(r.holds)}\n")
    return res.to_dict()


def cmd_report(cfg: dict, out: Path) -> dict:
    traces = [t for p in cfg["inputs"] for t in read_traces_csv(p)]
    groups = {}
    for tr in traces:
        groups.setdefault(tr.algo_id, []).append(tr)
    taus = {}
    for label, (a, b) in cfg["tau_pairs"].items():
        if a not in groups or b not in groups:
            raise cfgmod.ConfigError("CONFIG_INVALID_VALUE", f"tau_pairs.{label}: unknown algo_id {a!r} or {b!r}")
        taus[label] = relative_transfer(sorted(groups[a], key=lambda t: t.seed),
                                        sorted(groups[b], key=lambda t: t.seed))
    return aggregate_report(traces, taus, {}, out, cfg["thresholds"], cfg["title"])


COMMAND_FNS = {"toy": cmd_toy, "train": cmd_train, "transfer": cmd_transfer, "similarity": cmd_similarity,
               "bound": cmd_bound, "report": cmd_report}


# ----------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: USAGE: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CODES["USAGE"])


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xferlab", description="Transfer reinforcement-learning experiments.")
    p.add_argument("command", choices=cfgmod.COMMANDS)
    p.add_argument("--config", help="JSON config (defaults to the shipped config for the command)")
    p.add_argument("--seed-override", type=int, help="run a single seed instead of the config's list")
    p.add_argument("--out", default="runs", help="output root (default: ./runs)")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = Path(args.config) if args.config else cfgmod.default_config_path(args.command)
        raw, cfg = cfgmod.load(path, args.command)
        if args.seed_override is not None:
            raw = cfgmod.with_seed(raw, args.seed_override)
            cfg = cfgmod.validate(raw, args.command, path.parent)
        rid = cfgmod.run_id({"command": args.command, "config": raw})
        out = Path(args.out) / rid
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise cfgmod.ConfigError("IO_ERROR", f"cannot create {out}: {e}") from e
        _dump(out / "config.json", raw)
        summary = COMMAND_FNS[args.command](cfg, out)
        _dump(out / "summary.json" if args.command != "report" else out / "run_summary.json",
              {"command": args.command, "run_id": rid, **summary})
    except cfgmod.ConfigError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return EXIT_CODES[e.code]
    except (nn.NonFiniteError, FloatingPointError, ArithmeticError) as e:
        print(f"error: NUMERICAL_ERROR: {e}", file=sys.stderr)
        return EXIT_CODES["NUMERICAL_ERROR"]
    except OSError as e:
        print(f"error: IO_ERROR: {e}", file=sys.stderr)
        return EXIT_CODES["IO_ERROR"]
    except Exception as e:  # noqa: BLE001 - last resort, keeps the one-line error contract
        print(f"error: INTERNAL_ERROR: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CODES["INTERNAL_ERROR"]
    print(json.dumps({"run_id": rid, "out": str(out), **summary}, sort_keys=True))
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
