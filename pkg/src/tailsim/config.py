"""Experiment configuration: JSON parsing, validation, sweeps and hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .extreme_mec import SCHEMES as MEC_SCHEMES, MecConfig
from .fed_evt import FedConfig
from .rl_offload import DqnConfig, OffloadEnvConfig
from .simcore import ConfigurationError
from .vr_arcade import ArcadeConfig

SCENARIO_NAMES = ("extreme-mec", "fed-evt", "rl-offload", "vr-arcade", "fit")
TOP_LEVEL_KEYS = {"scenario", "seed", "horizon", "params", "sweep", "out_dir"}

# scenario -> (config dataclass, extra keys handled by the runner with their defaults)
_PARAM_SCHEMA = {
    "extreme-mec": (MecConfig, {"schemes": list(MEC_SCHEMES)}),
    "fed-evt": (FedConfig, {}),
    "rl-offload": (OffloadEnvConfig, {"dqn": {}, "eval_horizon": 50000}),
    "vr-arcade": (ArcadeConfig, {"players": [4, 8, 16, 24]}),
    "fit": (None, {"input": None, "threshold": None, "quantile": 0.99, "steps": 2000}),
}
_OWNED_BY_TOP_LEVEL = {"seed", "horizon"}


class ParseError(ValueError):
    """The config could not be read as JSON."""


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int = 0
    horizon: Optional[int] = None
    params: Dict[str, Any] = field(default_factory=dict)
    sweep: Optional[Dict[str, Any]] = None
    out_dir: str = "out"

    def canonical(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_json(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read config {path!r}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object")
    return data


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def _coerce(value):
    # JSON has no tuples; dataclass fields declared as sequences take lists
    return tuple(_coerce(v) for v in value) if isinstance(value, list) else value


def build_scenario_config(scenario: str, params: Dict[str, Any], seed: int, horizon: Optional[int]):
    """Instantiate the scenario dataclass, returning ``(config_or_None, extras)``.

    The dataclass constructor is where ranges are checked, so every bad value
    surfaces here, before anything runs.
    """
    cls, extras_default = _PARAM_SCHEMA[scenario]
    extras = {k: params.get(k, v) for k, v in extras_default.items()}
    names = {f.name for f in dataclasses.fields(cls)} if cls is not None else set()
    for key in params:
        if key in _OWNED_BY_TOP_LEVEL:
            raise ConfigurationError(f"params.{key}: set '{key}' at the top level instead")
        if key not in names and key not in extras_default:
            raise ConfigurationError(f"params.{key}: unknown key for scenario {scenario}")
    if cls is None:
        return None, extras
    kwargs = {k: _coerce(v) for k, v in params.items() if k in names}
    if "seed" in names:
        kwargs["seed"] = seed
    if horizon is not None and "horizon" in names:
        kwargs["horizon"] = horizon
    try:
        cfg = cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"params: {exc}") from exc
    return cfg, extras


def _validate_extras(scenario: str, extras: Dict[str, Any], cfg) -> None:
    if scenario == "extreme-mec":
        schemes = extras["schemes"]
        if not isinstance(schemes, list) or not schemes or any(s not in MEC_SCHEMES for s in schemes):
            raise ConfigurationError(f"params.schemes: each entry must be one of {MEC_SCHEMES}")
        if cfg.horizon * cfg.n_ues < 10_000:
            raise ConfigurationError("horizon: horizon * n_ues must be >= 10000 for the tail report")
    elif scenario == "rl-offload":
        dqn = extras["dqn"]
        if not isinstance(dqn, dict):
            raise ConfigurationError("params.dqn must be an object")
        names = {f.name for f in dataclasses.fields(DqnConfig)}
        for key in dqn:
            if key not in names:
                raise ConfigurationError(f"params.dqn.{key}: unknown key")
        d = DqnConfig(**dqn)
        if d.hidden < 1 or d.batch < 1 or d.capacity < d.batch or d.steps < 1 or d.lr <= 0:
            raise ConfigurationError("params.dqn: need hidden, batch, steps >= 1, capacity >= batch and lr > 0")
        if not isinstance(extras["eval_horizon"], int) or extras["eval_horizon"] < 1:
            raise ConfigurationError("params.eval_horizon must be a positive integer")
    elif scenario == "vr-arcade":
        players = extras["players"]
        if not players or any(not isinstance(n, int) or n < 1 for n in players):
            raise ConfigurationError("params.players must be a non-empty list of positive integers")
    elif scenario == "fit":
        if not isinstance(extras["input"], str):
            raise ConfigurationError("params.input must name a one-column CSV file")
        q = extras["quantile"]
        if not 0 < q < 1:
            raise ConfigurationError("params.quantile must lie in (0,1)")
        if extras["threshold"] is not None and not isinstance(extras["threshold"], (int, float)):
            raise ConfigurationError("params.threshold must be a number or null")


def resolve_seed(config_seed: Any, flag_seed: Optional[int]) -> int:
    """``--seed`` beats ``TAILSIM_SEED`` beats the config file."""
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get("TAILSIM_SEED")
    if env is not None and env.strip() != "":
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigurationError(f"TAILSIM_SEED must be an integer, got {env!r}") from exc
    if config_seed is None:
        return 0
    if not isinstance(config_seed, int) or isinstance(config_seed, bool):
        raise ConfigurationError("seed must be an integer")
    return config_seed


def validate(raw: Dict[str, Any], scenario: Optional[str] = None, seed: Optional[int] = None,
             out_dir: Optional[str] = None, require_sweep: bool = False) -> ExperimentConfig:
    """Check every key and range and return a config with defaults filled in."""
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigurationError(f"{sorted(unknown)[0]}: unknown top-level key")
    name = raw.get("scenario", scenario)
    if scenario is not None and name != scenario:
        raise ConfigurationError(f"scenario: config says {name!r} but the command asks for {scenario!r}")
    if name not in SCENARIO_NAMES:
        raise ConfigurationError(f"scenario must be one of {SCENARIO_NAMES}")
    s = resolve_seed(raw.get("seed"), seed)
    if s < 0:
        raise ConfigurationError("seed must be >= 0")
    horizon = raw.get("horizon")
    if horizon is not None and (not isinstance(horizon, int) or horizon < 0):
        raise ConfigurationError("horizon must be a non-negative integer")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigurationError("params must be an object")
    cfg, extras = build_scenario_config(name, params, s, horizon)
    _validate_extras(name, extras, cfg)
    filled = dict(extras)
    if cfg is not None:
        filled.update({f.name: _jsonable(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)})
        filled.pop("seed", None)
        if "horizon" in filled:
            horizon = filled.pop("horizon")
    sweep = raw.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or set(sweep) != {"param", "values"}:
            raise ConfigurationError("sweep must be an object with exactly 'param' and 'values'")
        values = sweep["values"]
        if not isinstance(values, list) or not values:
            raise ConfigurationError("sweep.values must be a non-empty list")
        if len(set(json.dumps(v, sort_keys=True) for v in values)) != len(values):
            raise ConfigurationError("sweep.values must be distinct")
        if sweep["param"] not in filled and sweep["param"] not in ("seed", "horizon"):
            raise ConfigurationError(f"sweep.param: unknown parameter {sweep['param']!r}")
        sweep = {"param": sweep["param"], "values": list(values)}
    elif require_sweep:
        raise ConfigurationError("sweep: the sweep command needs a 'sweep' block")
    out = out_dir if out_dir is not None else raw.get("out_dir", "out")
    if not isinstance(out, str) or not out:
        raise ConfigurationError("out_dir must be a non-empty path")
    exp = ExperimentConfig(name, s, horizon, filled, sweep, out)
    for child in sweep_children(exp):  # every sweep point must validate before anything runs
        materialize(child)
    return exp


def materialize(exp: ExperimentConfig):
    """Validated ``(scenario dataclass or None, extras)`` for a config without a sweep."""
    cfg, extras = build_scenario_config(exp.scenario, exp.params, exp.seed, exp.horizon)
    _validate_extras(exp.scenario, extras, cfg)
    return cfg, extras


def sweep_children(exp: ExperimentConfig) -> List[ExperimentConfig]:
    """One child per sweep value; children differ from the parent only in that parameter."""
    if exp.sweep is None:
        return [exp]
    out = []
    for v in exp.sweep["values"]:
        p = exp.sweep["param"]
        if p == "seed":
            child = dataclasses.replace(exp, seed=int(v), sweep=None)
        elif p == "horizon":
            child = dataclasses.replace(exp, horizon=int(v), sweep=None)
        else:
            params = dict(exp.params)
            params[p] = v
            child = dataclasses.replace(exp, params=params, sweep=None)
        out.append(child)
    return out
