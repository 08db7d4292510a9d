"""Strict JSON experiment configs.

Each subcommand has a fixed set of allowed keys; anything else is an error.
Omitted keys take the documented defaults (the algorithm block defaults to
the standard SAC hyperparameters).
"""
from __future__ import annotations

import copy
import dataclasses
import json
from importlib import resources
from pathlib import Path

from .envs import EnvSpec
from .sac import AlgoConfig
from .tasksim import ModelConfig
from .toy import ToyConfig
from .traces import config_hash

SCHEMA_VERSION = 1
COMMANDS = ("toy", "train", "transfer", "similarity", "bound", "report")


class ConfigError(Exception):
    """Raised with a machine-readable ``code``."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _check_keys(d, allowed, where: str, required=()) -> None:
    if not isinstance(d, dict):
        raise ConfigError("CONFIG_INVALID_VALUE", f"{where} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError("CONFIG_UNKNOWN_KEY", f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError("CONFIG_MISSING_KEY", f"missing key(s) {missing} in {where}")


def _build(cls, d, where: str, **extra):
    names = {f.name for f in dataclasses.fields(cls)} - set(extra)
    _check_keys(d or {}, names, where)
    try:
        return cls(**(d or {}), **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError("CONFIG_INVALID_VALUE", f"{where}: {e}") from e


def _seeds(raw, where="seeds") -> list:
    if not isinstance(raw, list) or not raw or not all(isinstance(s, int) and not isinstance(s, bool) for s in raw):
        raise ConfigError("CONFIG_INVALID_VALUE", f"{where} must be a nonempty list of integers")
    if len(set(raw)) != len(raw):
        raise ConfigError("CONFIG_INVALID_VALUE", f"{where} contains duplicates")
    return list(raw)


def env_from(base: EnvSpec | None, d, where: str) -> EnvSpec:
    """EnvSpec from a full block, or from overrides on ``base``."""
    full = dict(base.to_dict()) if base is not None else {}
    _check_keys(d or {}, {f.name for f in dataclasses.fields(EnvSpec)}, where)
    full.update(d or {})
    return _build(EnvSpec, full, where)


def _number(d, key, where, default=None, kind=float, lo=None):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
        raise ConfigError("CONFIG_INVALID_VALUE", f"{where}.{key} must be a{'n integer' if kind is int else ' number'}")
    if lo is not None and v < lo:
        raise ConfigError("CONFIG_INVALID_VALUE", f"{where}.{key} must be >= {lo}")
    return kind(v)


COMMON = {"schema_version", "command", "seeds", "record_wall_time"}

ALLOWED = {
    "toy": COMMON | {"toy"},
    "train": COMMON | {"env", "algo", "threshold", "stop_at_threshold"},
    "transfer": COMMON | {"source", "targets", "algo", "baselines", "beta_ablation"},
    "similarity": COMMON | {"source", "targets", "m", "model", "fit_targets", "mode"},
    "bound": COMMON | {"pairs", "max_states", "max_actions", "gammas", "tol"},
    "report": COMMON | {"inputs", "tau_pairs", "thresholds", "title"},
}


def validate(raw: dict, command: str, base_dir: Path | None = None) -> dict:
    """Check ``raw`` against the schema of ``command`` and return a normalised copy
    holding parsed objects (EnvSpec, AlgoConfig, ...) under the same keys."""
    if command not in COMMANDS:
        raise ConfigError("CONFIG_INVALID_VALUE", f"unknown command {command!r}")
    _check_keys(raw, ALLOWED[command], "config", required=("schema_version",))
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("CONFIG_INVALID_VALUE", f"unsupported schema_version {raw['schema_version']!r}")
    if raw.get("command", command) != command:
        raise ConfigError("CONFIG_INVALID_VALUE", f"config is for {raw['command']!r}, not {command!r}")
    cfg = {"command": command, "record_wall_time": bool(raw.get("record_wall_time", False))}
    if command != "bound" and command != "report":
        cfg["seeds"] = _seeds(raw.get("seeds", [0]))
    elif "seeds" in raw:
        cfg["seeds"] = _seeds(raw["seeds"])
    else:
        cfg["seeds"] = [0]

    if command == "toy":
        cfg["toy"] = _build(ToyConfig, raw.get("toy"), "toy", seeds=tuple(cfg["seeds"]))
    elif command == "train":
        cfg["env"] = env_from(None, raw.get("env"), "env")
        cfg["algo"] = _build(AlgoConfig, raw.get("algo"), "algo")
        th = raw.get("threshold", {})
        _check_keys(th, {"value", "controller_kp", "controller_kd", "margin", "episodes", "seed"}, "threshold")
        cfg["threshold"] = {
            "value": None if th.get("value") is None else _number(th, "value", "threshold"),
            "controller_kp": _number(th, "controller_kp", "threshold", 4.0),
            "controller_kd": _number(th, "controller_kd", "threshold", 2.0),
            "margin": _number(th, "margin", "threshold", 0.25, lo=0.0),
            "episodes": _number(th, "episodes", "threshold", 100, int, lo=1),
            "seed": _number(th, "seed", "threshold", 0, int),
        }
        cfg["stop_at_threshold"] = bool(raw.get("stop_at_threshold", False))
    elif command == "transfer":
        src = raw.get("source")
        _check_keys(src, {"env", "checkpoint", "train_steps", "seed"}, "source", required=("env",))
        cfg["source"] = {"env": env_from(None, src["env"], "source.env"),
                         "checkpoint": _path(src.get("checkpoint"), base_dir, "source.checkpoint"),
                         "train_steps": _number(src, "train_steps", "source", 15000, int, lo=0),
                         "seed": _number(src, "seed", "source", 100, int)}
        tg = raw.get("targets")
        if not isinstance(tg, dict) or not tg:
            raise ConfigError("CONFIG_INVALID_VALUE", "targets must be a nonempty object of env overrides")
        cfg["targets"] = {name: env_from(cfg["source"]["env"], v, f"targets.{name}") for name, v in tg.items()}
        cfg["algo"] = _build(AlgoConfig, raw.get("algo"), "algo")
        base = raw.get("baselines", ["scratch", "fine_tune", "zero_shot"])
        if not isinstance(base, list) or not set(base) <= {"scratch", "fine_tune", "zero_shot"}:
            raise ConfigError("CONFIG_INVALID_VALUE", "baselines must list scratch, fine_tune and/or zero_shot")
        cfg["baselines"] = list(base)
        abl = raw.get("beta_ablation", [])
        if not isinstance(abl, list) or not all(isinstance(b, (int, float)) and b >= 0 for b in abl):
            raise ConfigError("CONFIG_INVALID_VALUE", "beta_ablation must be a list of non-negative numbers")
        cfg["beta_ablation"] = [float(b) for b in abl]
    elif command == "similarity":
        cfg["source"] = env_from(None, raw.get("source"), "source")
        tg = raw.get("targets")
        if not isinstance(tg, dict) or not tg:
            raise ConfigError("CONFIG_INVALID_VALUE", "targets must be a nonempty object of env overrides")
        cfg["targets"] = {name: env_from(cfg["source"], v, f"targets.{name}") for name, v in tg.items()}
        cfg["m"] = _number(raw, "m", "config", 4000, int, lo=2)
        cfg["model"] = _build(ModelConfig, raw.get("model"), "model")
        cfg["fit_targets"] = bool(raw.get("fit_targets", True))
        cfg["mode"] = raw.get("mode", "source_models")
        if cfg["mode"] not in ("source_models", "target_models"):
            raise ConfigError("CONFIG_INVALID_VALUE", "mode must be source_models or target_models")
    elif command == "bound":
        cfg["pairs"] = _number(raw, "pairs", "config", 1000, int, lo=1)
        cfg["max_states"] = _number(raw, "max_states", "config", 6, int, lo=1)
        cfg["max_actions"] = _number(raw, "max_actions", "config", 3, int, lo=1)
        gam = raw.get("gammas", [0.5, 0.9, 0.95])
        if not isinstance(gam, list) or not gam or not all(isinstance(g, (int, float)) and 0 <= g < 1 for g in gam):
            raise ConfigError("CONFIG_INVALID_VALUE", "gammas must be a nonempty list in [0, 1)")
        cfg["gammas"] = [float(g) for g in gam]
        cfg["tol"] = _number(raw, "tol", "config", 1e-8)
        if cfg["tol"] <= 0:
            raise ConfigError("CONFIG_INVALID_VALUE", "tol must be positive")
    elif command == "report":
        inputs = raw.get("inputs")
        if not isinstance(inputs, list) or not inputs:
            raise ConfigError("CONFIG_INVALID_VALUE", "inputs must be a nonempty list of trace CSV paths")
        cfg["inputs"] = [_path(p, base_dir, "inputs") for p in inputs]
        pairs = raw.get("tau_pairs", {})
        if not isinstance(pairs, dict) or not all(isinstance(v, list) and len(v) == 2 for v in pairs.values()):
            raise ConfigError("CONFIG_INVALID_VALUE", "tau_pairs maps labels to [algo_id, baseline_id]")
        cfg["tau_pairs"] = pairs
        th = raw.get("thresholds", {})
        if not isinstance(th, dict):
            raise ConfigError("CONFIG_INVALID_VALUE", "thresholds maps algo_id to a return threshold")
        cfg["thresholds"] = {k: _number(th, k, "thresholds") for k in th}
        cfg["title"] = str(raw.get("title", ""))
    return cfg


def _path(p, base_dir, where):
    if p is None:
        return None
    if not isinstance(p, str):
        raise ConfigError("CONFIG_INVALID_VALUE", f"{where} must be a path string")
    path = Path(p)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    if not path.exists():
        raise ConfigError("FILE_NOT_FOUND", f"{where}: {path} does not exist")
    return path


def load(path, command: str) -> tuple:
    """Read and validate a config file; returns ``(raw, parsed)``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("CONFIG_NOT_FOUND", f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("CONFIG_INVALID_JSON", f"{path}: {e}") from e
    return raw, validate(raw, command, path.parent)


def with_seed(raw: dict, seed: int) -> dict:
    out = copy.deepcopy(raw)
    out["seeds"] = [seed]
    return out


def run_id(raw: dict) -> str:
    """Hash of the canonical config (seeds included)."""
    return config_hash(raw)


def default_config_path(command: str) -> Path:
    return Path(str(resources.files("xferlab.configs").joinpath(f"{command}.json")))
