"""Experiment configuration: one JSON file, strictly validated.

Unknown keys are rejected everywhere so a typo cannot silently fall back to
a default. The resolved configuration (defaults merged with the file and
any --set overrides) is hashed canonically; every artifact directory gets a
config echo and the hashes of its inputs, which is what makes reruns
checkable byte-for-byte.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .data import json_hash
from .envsim import EnvironmentSpec, ToolSpec
from .errors import ConfigError

DEFAULT_CONFIG = {
    "seed": 0,
    "tool": {
        "name": "brush",
        "handle_length": 3.0,
        "tip_stiffness": 30.0,
        "tip_rest_length": 1.5,
        "tip_width": 0.8,
        "friction_mu": 0.3,
    },
    "collect": {
        "n_inclined": 11,
        "n_step": 10,
        "inclination_range": [-0.3, 0.3],
        "step_height_range": [0.5, 5.0],
        "grip_force": 5.0,
        "tactile_sigma": 0.01,
        "prox_sigma": 0.0,
    },
    "demo": {
        "target_force": 0.5,
        "count": 3,
        "envs": [
            {"kind": "inclined", "inclination": 0.05},
            {"kind": "inclined", "inclination": 0.10},
            {"kind": "inclined", "inclination": 0.15},
        ],
        "tool": None,  # defaults to the pre-training tool
    },
    "pretrain": {
        "epochs": 2000,
        "lr": 0.001,
        "beta": 0.1,
        "t_past": 20,
        "t_next": 10,
        "dropout": 0.2,
        "batch_size": 64,
        "channel_mask": "full",
    },
    "finetune": {
        "epochs": 300,
        "lr": 0.005,
        "mask": ["dec_fc"],
    },
    "rollout": {
        "duration": 10.0,
        "clamp": 2.0,
        "seeds": [0, 1, 2],
        "env": {"kind": "inclined", "inclination": 0.1},
    },
    "eval": {
        "seeds": [0, 1, 2],
        "target_force": 0.5,
        "metrics": ["rmse_force", "rmse_slope"],
        "envs": [
            {"kind": "inclined", "inclination": 0.08},
            {"kind": "inclined", "inclination": 0.10},
            {"kind": "inclined", "inclination": 0.12},
        ],
        "cell": 0.5,
    },
}


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set needs key.path=value, got {assignment!r}")
    key_path, _, raw = assignment.partition("=")
    keys = key_path.split(".")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown config key: {key_path}")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"unknown config key: {key_path}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings allowed
    node[keys[-1]] = value


def load_config(path=None, overrides=()) -> dict:
    """Defaults, overlaid with the JSON file, overlaid with --set entries."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge(cfg, user)
    for assignment in overrides:
        _apply_set(cfg, assignment)
    validate_config(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    return json_hash(cfg)


def env_from_config(d: dict) -> EnvironmentSpec:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"environment config needs a 'kind': {d!r}")
    allowed = {f.name for f in EnvironmentSpec.__dataclass_fields__.values()}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown environment keys: {sorted(unknown)}")
    try:
        return EnvironmentSpec(**d)
    except Exception as e:
        raise ConfigError(f"bad environment config: {e}")


def tool_from_config(d: dict) -> ToolSpec:
    allowed = {f.name for f in ToolSpec.__dataclass_fields__.values()}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown tool keys: {sorted(unknown)}")
    try:
        return ToolSpec(**d)
    except Exception as e:
        raise ConfigError(f"bad tool config: {e}")


def validate_config(cfg: dict) -> None:
    tool_from_config(cfg["tool"])
    if cfg["demo"]["tool"] is not None:
        tool_from_config(cfg["demo"]["tool"])
    for env in cfg["demo"]["envs"]:
        env_from_config(env)
    for env in cfg["eval"]["envs"]:
        env_from_config(env)
    env_from_config(cfg["rollout"]["env"])
    pt = cfg["pretrain"]
    if pt["epochs"] <= 0 or pt["lr"] <= 0:
        raise ConfigError("pretrain.epochs and pretrain.lr must be positive")
    ft = cfg["finetune"]
    if ft["epochs"] <= 0 or ft["lr"] <= 0:
        raise ConfigError("finetune.epochs and finetune.lr must be positive")
    if not isinstance(ft["mask"], list) or not ft["mask"]:
        raise ConfigError("finetune.mask must be a non-empty list of group names")
    if cfg["demo"]["count"] != len(cfg["demo"]["envs"]):
        raise ConfigError("demo.count must match the number of demo.envs")
    if cfg["demo"]["target_force"] <= 0:
        raise ConfigError("demo.target_force must be positive")


def write_echo(out_dir, cfg: dict, inputs: dict | None = None) -> str:
    """Drop config_echo.json (+hash) and inputs.json into an artifact dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    with open(out_dir / "config_echo.json", "w") as fh:
        json.dump({"config": cfg, "config_hash": digest}, fh, indent=1, sort_keys=True)
    if inputs is not None:
        with open(out_dir / "inputs.json", "w") as fh:
            json.dump(inputs, fh, indent=1, sort_keys=True)
    return digest
